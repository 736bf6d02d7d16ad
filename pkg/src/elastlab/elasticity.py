"""Relative-similarity (S_rel) measurements and their closed forms.

S_rel compares the change a single fictitious gradient step on ``(x, y)``
causes at a test point ``x'`` against the change it causes at ``x`` itself.
An undefined value (zero change at ``x``) is reported as ``None`` on scalar
results and ``NaN`` inside arrays; aggregation skips undefined entries and
keeps count of the defined ones.
"""
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import optimize
from scipy.special import kl_div, softmax

from .csvio import write_csv
from .errors import ContractError, ParameterError
from .linalg import as_vector

UNDEFINED_RTOL = 1e-14
PROB_ATOL = 1e-9


@dataclass(frozen=True)
class SRelSample:
    value: float | None
    numerator: float
    denominator: float
    eta: float | None = None

    @property
    def defined(self):
        return self.value is not None

    def __float__(self):
        return math.nan if self.value is None else float(self.value)


def _value(sample):
    if sample is None:
        return None
    if isinstance(sample, SRelSample):
        return sample.value
    v = float(sample)
    return None if math.isnan(v) else v


def srel_generic(predict, grad_loss, weights, x, x_prime, y, eta):
    """S_rel for a real (or vector) valued predictor under one fictitious step of size ``eta``.

    ``predict(weights, x)`` and ``grad_loss(weights, x, y)`` define the model;
    vector predictions are compared in Euclidean norm.
    """
    if not eta > 0:
        raise ParameterError(f"eta must be positive, got {eta}")
    w = np.asarray(weights, dtype=float)
    w_plus = w - eta * np.asarray(grad_loss(w, x, y), dtype=float)
    f_x = np.asarray(predict(w, x), dtype=float)
    den = float(np.linalg.norm(np.atleast_1d(np.asarray(predict(w_plus, x)) - f_x)))
    num = float(
        np.linalg.norm(np.atleast_1d(np.asarray(predict(w_plus, x_prime)) - np.asarray(predict(w, x_prime))))
    )
    if not den >= UNDEFINED_RTOL * (1.0 + float(np.linalg.norm(np.atleast_1d(f_x)))):
        return SRelSample(None, num, den, eta)
    return SRelSample(num / den, num, den, eta)


def check_probability(p, what="prediction"):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > PROB_ATOL:
        raise ContractError(f"{what} is not a probability vector")
    return p


def kl_divergence(p, q):
    """``KL(p || q)`` in nats with ``0 log(0/q) = 0``; ``inf`` when ``q_i = 0 < p_i``."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    # kl_div adds -p + q per term: zero in total for normalized inputs, but keeps each term >= 0
    return float(np.sum(kl_div(p, q)))


def kl_from_logits(z_plus, z):
    """``KL(softmax(z_plus) || softmax(z))`` along the last axis, computed from logits.

    Centres the logit change under ``softmax(z)`` and uses ``log1p``/``expm1`` so
    that tiny divergences between confident distributions keep full relative
    precision (the probability-space formula loses it to cancellation).
    """
    z_plus, z = np.asarray(z_plus, dtype=float), np.asarray(z, dtype=float)
    p = softmax(z, axis=-1)
    d = z_plus - z
    d = d - np.sum(p * d, axis=-1, keepdims=True)
    lse_shift = np.log1p(np.sum(p * np.expm1(d), axis=-1))
    return np.sum(softmax(z_plus, axis=-1) * d, axis=-1) - lse_shift


def srel_kl(softmax_predict, grad_loss, weights, x, x_prime, y, eta):
    """KL-ratio S_rel for a probability-vector predictor trained with cross-entropy."""
    if not eta > 0:
        raise ParameterError(f"eta must be positive, got {eta}")
    w = np.asarray(weights, dtype=float)
    w_plus = w - eta * np.asarray(grad_loss(w, x, y), dtype=float)
    probs = [
        check_probability(softmax_predict(v, z))
        for v, z in ((w_plus, x_prime), (w, x_prime), (w_plus, x), (w, x))
    ]
    num = kl_divergence(probs[0], probs[1])
    den = kl_divergence(probs[2], probs[3])
    if not (math.isfinite(num) and math.isfinite(den)) or den < UNDEFINED_RTOL:
        return SRelSample(None, num, den, eta)
    return SRelSample(num / den, num, den, eta)


class SmoothedSRel(NamedTuple):
    value: float | None
    n_defined: int
    n_pairs: int


def srel_k_smooth(pair_srel, test_points, sampled_points):
    """Class-pair average of S_rel over every (test, sampled) combination.

    ``pair_srel(x_prime, x)`` evaluates S_rel with ``x`` the sampled point.
    Undefined pairs are dropped and the divisor shrinks accordingly.
    """
    values = []
    for x_prime in test_points:
        for x in sampled_points:
            v = _value(pair_srel(x_prime, x))
            if v is not None:
                values.append(v)
    n_pairs = len(test_points) * len(sampled_points)
    if not values:
        return SmoothedSRel(None, 0, n_pairs)
    return SmoothedSRel(math.fsum(values) / len(values), len(values), n_pairs)


# --- last layer ridge model ---------------------------------------------------

def last_layer_predict(W, h):
    return np.asarray(W) @ np.asarray(h)


def last_layer_sample_grad(W, h, k, ridge):
    """Gradient of ``0.5 ||e_k - W h||^2 + 0.5 ridge ||W||_F^2`` (one sample of class ``k``)."""
    W = np.asarray(W, dtype=float)
    resid = W @ h
    resid[k] -= 1.0
    return np.outer(resid, h) + ridge * W


def srel_last_layer_closed_form(W, h_ki, h_cj, k, lambda1, N, K):
    """Closed-form S_rel of the ridge last layer, sampled point ``h_ki`` of class ``k``.

    Independent of the step length: both changes are linear in it.
    Returns ``None`` when the change at ``h_ki`` vanishes.
    """
    W = np.asarray(W, dtype=float)
    h, hp = np.asarray(h_ki, dtype=float), np.asarray(h_cj, dtype=float)
    ridge = N * lambda1 / K
    hh = float(h @ h)
    cross = float(h @ hp)
    T_hp = ridge * hp + cross * h
    h_tilde = ridge + hh
    wT = W @ T_hp
    wh = W @ h
    num = cross**2 - 2.0 * cross * wT[k] + float(wT @ wT)
    den = hh**2 - 2.0 * h_tilde * hh * wh[k] + h_tilde**2 * float(wh @ wh)
    if not math.sqrt(max(den, 0.0)) >= UNDEFINED_RTOL * (1.0 + hh):
        return None
    return math.sqrt(max(num, 0.0) / den)


# --- ReLU gate ----------------------------------------------------------------

def relu_predict(w, x):
    return max(0.0, float(np.dot(w, x)))


def relu_grad_loss(beta=1.0):
    """Gradient proxy ``-beta 1{y>0} (y - <w,x>) x`` of the realizable ReLU loss."""

    def grad(w, x, y):
        x = np.asarray(x, dtype=float)
        if y > 0:
            return -beta * (y - float(np.dot(w, x))) * x
        return np.zeros_like(x)

    return grad


def relu_fictitious_change(spec, t, eta, x, x_prime):
    """Actual ``|relu(<w+,x'>) - relu(<w,x'>)|`` along the closed-form ReLU flow."""
    w = spec.state(t)
    y = max(0.0, float(np.dot(spec.w_star, x)))
    w_plus = w - eta * relu_grad_loss(spec.beta)(w, x, y)
    return abs(relu_predict(w_plus, x_prime) - relu_predict(w, x_prime))


def relu_change_upper_bound(spec, t, eta, x, x_prime):
    x, x_prime = np.asarray(x, dtype=float), np.asarray(x_prime, dtype=float)
    if not float(spec.w_star @ x) > 0:
        return 0.0
    drift = spec.decay(t) @ (spec.w0 - spec.w_star)
    return eta * spec.beta * abs(float(x @ x_prime)) * abs(float(drift @ x))


def relu_srel_lower_bound(x, x_prime):
    """Late-time lower bound ``|<x,x'>| / ||x||^2`` (valid when both points are active for ``w*``)."""
    x, x_prime = as_vector(x, "x"), as_vector(x_prime, "x_prime")
    nx = float(x @ x)
    if nx == 0.0:
        raise ParameterError("x must be nonzero")
    return abs(float(x @ x_prime)) / nx


# --- weight-homogeneous feature-linear models --------------------------------

def _zero_alpha(x):
    return 0.0


@dataclass
class DHomModel:
    """``f(W, x) = alpha(x) + sum_r <beta_r(x), w_r^d>``.

    ``beta(x)`` returns all feature vectors stacked as a ``(width, n)`` array.
    """

    weights: np.ndarray
    degree: int
    beta: object
    alpha: object = field(default=_zero_alpha)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if int(self.degree) != self.degree or self.degree < 1:
            raise ParameterError(f"degree must be a positive integer, got {self.degree}")
        self.degree = int(self.degree)

    @classmethod
    def diagonal(cls, w, degree=2, alpha=_zero_alpha):
        """``W = diag(w)`` with coordinate features ``beta_rr(x) = x_r``."""
        w = as_vector(w, "w")
        return cls(np.diag(w), degree, lambda x: np.diag(np.asarray(x, dtype=float)), alpha)

    def features(self, x):
        return np.asarray(self.beta(np.asarray(x, dtype=float)), dtype=float)

    def predict(self, W, x):
        return float(self.alpha(x)) + float(np.sum(self.features(x) * np.asarray(W) ** self.degree))

    def grad_loss(self, W, x, y):
        """Gradient of ``0.5 (y - f(W, x))^2``."""
        W = np.asarray(W, dtype=float)
        resid = y - self.predict(W, x)
        return -resid * self.degree * self.features(x) * W ** (self.degree - 1)

    def srel(self, x, x_prime, y, eta):
        return srel_generic(self.predict, self.grad_loss, self.weights, x, x_prime, y, eta)


def _dhom_parts(model, x, x_prime):
    bx, bxp = model.features(x), model.features(x_prime)
    powers = model.weights ** (2 * (model.degree - 1))
    den = abs(float(np.sum(bx * bx * powers)))
    return bx, bxp, powers, den


def srel_dhom_limit_general(model, x, x_prime):
    """Small-step limit ``|sum_r <b_r(x') b_r(x), w_r^{2(d-1)}>| / |sum_r <b_r(x)^2, w_r^{2(d-1)}>|``."""
    bx, bxp, powers, den = _dhom_parts(model, x, x_prime)
    if den == 0.0:
        return None
    return abs(float(np.sum(bxp * bx * powers))) / den


def srel_dhom_upper_bound(model, x, x_prime):
    """Upper bound on the small-step limit: ``max_r ||b_r(x') b_r(x)|| * sum_r ||w_r^{2(d-1)}||`` over the denominator."""
    bx, bxp, powers, den = _dhom_parts(model, x, x_prime)
    if den == 0.0:
        return None
    feat = float(np.max(np.linalg.norm(bxp * bx, axis=1)))
    return feat * float(np.sum(np.linalg.norm(powers, axis=1))) / den


def diag_quad_coefficients(spec, t):
    """Per-coordinate weights ``a_r / D_r(t)`` of the exact diagonal-quadratic S_rel."""
    a, b = spec.a, spec.b
    t = np.asarray(t, dtype=float)[..., None]
    return a / (b + (-b + a / spec.w0_sq) * np.exp(-4.0 * spec.theta * a * t))


def srel_diag_quad_time(spec, beta_x, beta_xp, t):
    """Exact small-step S_rel along the diagonal degree-2 flow at time ``t``.

    ``t`` may be an array, in which case an array is returned with NaN where undefined.
    """
    coef = diag_quad_coefficients(spec, t)
    bx, bxp = np.asarray(beta_x, dtype=float), np.asarray(beta_xp, dtype=float)
    num = np.abs(np.sum(coef * bxp * bx, axis=-1))
    den = np.abs(np.sum(coef * bx * bx, axis=-1))
    if np.ndim(t) == 0:
        return None if den == 0.0 else float(num / den)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


# --- two-exponential ratio lemma ---------------------------------------------

class LemmaBound(NamedTuple):
    f_value: object
    lower_bound: object
    t1_star: float
    t2_star: float


def _critical_time(b, c, p_sq, q_sq):
    """Stationary point of ``b e^{-p t} + c e^{-q t}`` in ``t > 0``, if any."""
    if b == 0.0 or c == 0.0 or p_sq == q_sq:
        return None
    ratio = -q_sq * c / (p_sq * b)
    if ratio <= 0:
        return None
    tc = math.log(ratio) / (q_sq - p_sq)
    return tc if tc > 0 else None


def _last_nonpositive(g, candidates):
    """Smallest ``t* >= 0`` with ``g > 0`` on ``(t*, inf)``, for ``g`` with at most one extremum and ``g(inf) > 0``."""
    bad = [c for c in candidates if g(c) <= 0]
    if not bad:
        return 0.0
    lo = max(bad)
    hi = max(1.0, 2.0 * lo)
    while g(hi) <= 0:
        hi *= 2.0
        if hi > 1e300:
            raise ParameterError("threshold time not found")
    return float(optimize.bisect(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=2000))


def lemma_bound_eval(alpha_sq, b1, c1, b2, c2, p_sq, q_sq, t, t2_star=None):
    """Ratio ``f(t)`` of two constant-plus-two-exponential sums and its late-time lower bound.

    ``f(t) = |alpha^2 + b1 e^{-p^2 t} + c1 e^{-q^2 t}| / |alpha^2 + b2 e^{-p^2 t} + c2 e^{-q^2 t}|``
    with ``b1, b2 >= 0`` and ``b1 + c1 = b2 + c2 = beta^2``. For ``t >= max(t1*, t2*)`` the
    returned lower bound never exceeds ``f(t)``. ``t1*`` and ``t2*`` are the thresholds after
    which the denominator, respectively ``alpha^2 - b1 e^{-q^2 t}``, stay positive; a larger
    ``t2_star`` may be passed to tighten the bound.
    """
    if not alpha_sq > 0:
        raise ParameterError("alpha_sq must be positive")
    if b1 < 0 or b2 < 0:
        raise ParameterError("b1 and b2 must be nonnegative")
    if not (p_sq > 0 and q_sq > 0):
        raise ParameterError("p_sq and q_sq must be positive")
    beta_sq = b1 + c1
    scale = max(1.0, abs(b1), abs(c1), abs(b2), abs(c2))
    if abs(beta_sq - (b2 + c2)) > 1e-12 * scale:
        raise ParameterError("need b1 + c1 == b2 + c2")
    if beta_sq < -1e-12 * scale:
        raise ParameterError("b1 + c1 must be a square (nonnegative)")
    beta_sq = max(beta_sq, 0.0)

    def den(s):
        return alpha_sq + b2 * math.exp(-p_sq * s) + c2 * math.exp(-q_sq * s)

    def num_floor(s):
        return alpha_sq - b1 * math.exp(-q_sq * s)

    tc = _critical_time(b2, c2, p_sq, q_sq)
    t1 = _last_nonpositive(den, [0.0] + ([tc] if tc is not None else []))
    t2 = _last_nonpositive(num_floor, [0.0])
    if t2_star is not None:
        if t2_star < t2 or num_floor(t2_star) < 0:
            raise ParameterError(f"t2_star must be at least {t2}")
        t2 = float(t2_star)

    t = np.asarray(t, dtype=float)
    ep, eq = np.exp(-p_sq * t), np.exp(-q_sq * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.abs(alpha_sq + b1 * ep + c1 * eq) / np.abs(alpha_sq + b2 * ep + c2 * eq)
    lower = (alpha_sq - abs(b1) * math.exp(-q_sq * t2)) / (alpha_sq + abs(b2) * ep + beta_sq * eq)
    if t.ndim == 0:
        f, lower = float(f), float(lower)
    return LemmaBound(f, lower, t1, t2)


# --- time series --------------------------------------------------------------

@dataclass
class SRelSeries:
    """S_rel per run, time and pair (``NaN`` = undefined) with across-run statistics."""

    times: np.ndarray
    pair_ids: list
    values: np.ndarray
    run_ids: list

    def __post_init__(self):
        self.times = np.asarray(self.times)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.run_ids), self.times.size, len(self.pair_ids)):
            raise ParameterError(f"values shape {self.values.shape} does not match runs x times x pairs")

    @property
    def defined_count(self):
        return np.sum(~np.isnan(self.values), axis=0)

    @property
    def mean(self):
        count = self.defined_count
        total = np.nansum(self.values, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(count > 0, total / np.maximum(count, 1), np.nan)

    @property
    def std(self):
        count = self.defined_count
        dev = np.where(np.isnan(self.values), 0.0, self.values - self.mean[None])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(count > 0, np.sqrt(np.sum(dev * dev, axis=0) / np.maximum(count, 1)), np.nan)

    def rows(self, include_runs=True):
        mean, std, count = self.mean, self.std, self.defined_count
        for ti, t in enumerate(self.times):
            for pi, pid in enumerate(self.pair_ids):
                if include_runs:
                    for ri, rid in enumerate(self.run_ids):
                        v = self.values[ri, ti, pi]
                        yield [t, pid, rid, v, int(not np.isnan(v))]
                yield [t, pid, "mean", mean[ti, pi], int(count[ti, pi])]
                yield [t, pid, "std", std[ti, pi], int(count[ti, pi])]

    def write_csv(self, path, include_runs=True):
        return write_csv(
            path, "srel_series/1", ["t", "pair_id", "run_id", "value", "defined_count"], self.rows(include_runs)
        )

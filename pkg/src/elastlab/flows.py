"""Closed-form gradient-flow trajectories and an RK4 oracle.

Three flows have exact solutions:

* ridge regression of one-hot labels on fixed features (last layer of a net),
  ``dW/dt = theta^2 (beta^2 U - W M)`` row-wise;
* a ReLU gate in the realizable setting, ``dw/dt = beta (z - M w)``;
* the diagonal degree-2 feature-linear model, ``dw_q/dt = 2 theta (a_q w_q - b_q w_q^3)``.
"""
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .csvio import write_csv
from .errors import NumericFailure, ParameterError, ShapeError, SingularityError
from .linalg import PD_THRESHOLD, as_matrix, as_vector, min_eigenvalue, solve_spd, sym_expm_neg


@dataclass(frozen=True)
class LinearFlowSpec:
    """Last-layer ridge flow over a :class:`~elastlab.data.FeatureBank`.

    ``M = (N lambda1 / K) I + (1/N) sum h h^T`` and ``u_q`` is the class-``q``
    feature sum divided by ``N``. Row ``q`` of ``w0`` is the weight vector of
    output ``q``.
    """

    features: object
    lambda1: float
    theta: float
    w0: np.ndarray
    beta_sq: float = 1.0
    M: np.ndarray = field(init=False, repr=False)
    U: np.ndarray = field(init=False, repr=False)
    fixed_point: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.lambda1 > 0:
            raise ParameterError(f"lambda1 must be positive, got {self.lambda1}")
        bank = self.features
        K, N, p = bank.num_classes, bank.total, bank.dim
        w0 = as_matrix(self.w0, "w0")
        if w0.shape != (K, p):
            raise ShapeError(f"w0 must have shape {(K, p)}, got {w0.shape}")
        H = bank.stacked()
        M = (N * self.lambda1 / K) * np.eye(p) + H.T @ H / N
        U = np.stack([h.sum(axis=0) / N for h in bank.features])
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "M", 0.5 * (M + M.T))
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "fixed_point", self.beta_sq * solve_spd(self.M, U.T).T)

    @property
    def ridge(self):
        bank = self.features
        return bank.total * self.lambda1 / bank.num_classes

    def state(self, t):
        if t == 0:
            return self.w0.copy()
        E = sym_expm_neg(self.M, self.theta**2 * t)
        return (self.w0 - self.fixed_point) @ E + self.fixed_point

    def rhs(self, W):
        return self.theta**2 * (self.beta_sq * self.U - W @ self.M)

    def with_initial(self, w0):
        return dataclasses.replace(self, w0=w0)


@dataclass(frozen=True)
class ReluFlowSpec:
    """ReLU-gate flow with sample-average ``M = E[1{w*.x>0} x x^T]`` and ``z = E[1{..} relu(w*.x) x]``."""

    dataset: object
    beta: float
    w_star: np.ndarray
    w0: np.ndarray
    M: np.ndarray = field(init=False, repr=False)
    z: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        w_star = as_vector(self.w_star, "w_star")
        w0 = as_vector(self.w0, "w0")
        X = self.dataset.x
        if X.shape[1] != w_star.size or w0.size != w_star.size:
            raise ShapeError("w_star, w0 and the data must share one dimension")
        pre = X @ w_star
        active = X[pre > 0]
        n = X.shape[0]
        M = active.T @ active / n
        M = 0.5 * (M + M.T)
        z = active.T @ np.maximum(0.0, pre[pre > 0]) / n
        lam = min_eigenvalue(M)
        if not lam > PD_THRESHOLD:
            raise SingularityError(
                f"active second-moment matrix is not positive definite: minimum eigenvalue {lam:.6g}",
                min_eigenvalue=lam,
            )
        for name, val in (("w_star", w_star), ("w0", w0), ("M", M), ("z", z)):
            object.__setattr__(self, name, val)

    @property
    def limit(self):
        return solve_spd(self.M, self.z)

    def decay(self, t):
        """``exp(-beta M t)``."""
        return sym_expm_neg(self.M, self.beta * t)

    def state(self, t):
        E = self.decay(t)
        return E @ self.w0 + solve_spd(self.M, self.z - E @ self.z)

    def rhs(self, w):
        return self.beta * (self.z - self.M @ w)

    def with_initial(self, w0):
        return dataclasses.replace(self, w0=w0)


@dataclass(frozen=True)
class DiagQuadFlowSpec:
    """Diagonal degree-2 model with moments ``a``, ``b`` and initial squared weights ``w0_sq``."""

    a: np.ndarray
    b: np.ndarray
    theta: float
    w0_sq: np.ndarray

    def __post_init__(self):
        a, b, w0_sq = (as_vector(v, n) for v, n in ((self.a, "a"), (self.b, "b"), (self.w0_sq, "w0_sq")))
        if not (a.size == b.size == w0_sq.size):
            raise ShapeError("a, b and w0_sq must have equal length")
        if not self.theta > 0:
            raise ParameterError(f"theta must be positive, got {self.theta}")
        if np.any(a <= 0):
            raise ParameterError("every a_q must be positive")
        if np.any(b <= 0):
            raise ParameterError("every b_q must be positive")
        if np.any(w0_sq <= 0) or np.any(w0_sq >= a / b):
            raise ParameterError("need 0 < w0_sq_q < a_q / b_q for every q")
        for name, val in (("a", a), ("b", b), ("w0_sq", w0_sq)):
            object.__setattr__(self, name, val)

    def state(self, t):
        """Squared weights ``w_q(t)^2``."""
        a, b = self.a, self.b
        return a / (b + (a / self.w0_sq - b) * np.exp(-4.0 * self.theta * a * t))

    def weights(self, t):
        return np.sqrt(self.state(t))

    def rhs(self, w):
        return 2.0 * self.theta * (self.a * w - self.b * w**3)

    def with_initial(self, w0):
        return dataclasses.replace(self, w0_sq=np.asarray(w0, dtype=float) ** 2)


def linear_flow_state(spec, t):
    return spec.state(t)


def relu_flow_state(spec, t):
    return spec.state(t)


def diag_quad_flow_state(spec, t):
    return spec.state(t)


def _ode_state(spec, t):
    # diag-quad flow integrates w, but its closed form is stated for w^2
    if isinstance(spec, DiagQuadFlowSpec):
        return spec.weights(t)
    return spec.state(t)


def initial_state(spec):
    if isinstance(spec, DiagQuadFlowSpec):
        return np.sqrt(spec.w0_sq)
    return np.array(spec.w0, dtype=float)


def rk4_integrate(rhs, w0, t_end, steps):
    """Classical fourth-order Runge-Kutta for autonomous ``dw/dt = rhs(w)`` with fixed step."""
    if steps < 1:
        raise ParameterError("steps must be at least 1")
    w = np.array(w0, dtype=float)
    h = float(t_end) / steps
    for _ in range(int(steps)):
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * h * k1)
        k3 = rhs(w + 0.5 * h * k2)
        k4 = rhs(w + h * k3)
        w = w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return w


RK4_STEPS_PER_UNIT = 10_000


def flow_rate(spec):
    """The scalar in front of each flow's right-hand side (``theta^2``, ``beta`` or ``2 theta``)."""
    if isinstance(spec, LinearFlowSpec):
        return spec.theta**2
    if isinstance(spec, ReluFlowSpec):
        return spec.beta
    return 2.0 * spec.theta


def _rk4_fixed(spec, times, steps_per_unit):
    out, w, t_prev = [], initial_state(spec), 0.0
    for t in times:
        dt = t - t_prev
        if dt < 0:
            raise ParameterError("times must be ascending and nonnegative")
        if dt > 0:
            w = rk4_integrate(spec.rhs, w, dt, max(1, int(np.ceil(dt * steps_per_unit))))
        out.append(w)
        t_prev = t
    return out


def rk4_trajectory(spec, times, steps_per_unit=None, rtol=1e-10, max_doublings=8):
    """RK4 states of ``spec`` at ascending ``times``, integrating segment by segment.

    With an explicit ``steps_per_unit`` the step count is fixed. Otherwise it
    starts at ``RK4_STEPS_PER_UNIT`` per unit of rate-scaled time
    (``flow_rate(spec) * t``) and doubles until two successive resolutions
    agree within ``rtol`` at every time.

    Raises
    ------
    NumericFailure
        If ``max_doublings`` doublings do not reach ``rtol``.
    """
    if steps_per_unit is not None:
        return _rk4_fixed(spec, times, steps_per_unit)
    spu = RK4_STEPS_PER_UNIT * flow_rate(spec)
    coarse = _rk4_fixed(spec, times, spu)
    for _ in range(max_doublings):
        spu *= 2
        fine = _rk4_fixed(spec, times, spu)
        if all(np.linalg.norm(f - c) <= rtol * max(np.linalg.norm(f), 1e-300) for f, c in zip(fine, coarse)):
            return fine
        coarse = fine
    raise NumericFailure(f"RK4 did not settle to {rtol:g} after {max_doublings} doublings")


def ode_residual(spec, t, h=1e-5):
    """Norm of (finite-difference derivative of the closed form) minus the ODE right-hand side.

    Central differences when ``t >= h``, second-order forward differences otherwise.
    """
    if t >= h:
        deriv = (_ode_state(spec, t + h) - _ode_state(spec, t - h)) / (2 * h)
    else:
        f0, f1, f2 = (_ode_state(spec, t + k * h) for k in range(3))
        deriv = (-3 * f0 + 4 * f1 - f2) / (2 * h)
    return float(np.linalg.norm(deriv - spec.rhs(_ode_state(spec, t))))


def write_trajectory_csv(spec, times, path):
    rows = []
    for t in times:
        s = np.ravel(spec.state(t))
        rows.append([t, *s])
    width = len(rows[0]) - 1 if rows else 0
    header = ["t"] + [f"w_{j}" for j in range(width)]
    return write_csv(path, "trajectory/1", header, rows)

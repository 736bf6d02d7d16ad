"""Named invariant checks behind ``elastlab verify``.

Every check reports the measured value, the tolerance and the relation that
must hold between them. ``perturb`` replaces tolerances to exercise the
failure path.
"""
import functools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .csvio import write_csv
from .data import DatasetReal, FeatureBank, make_rng, relu_realizable
from .elasticity import (
    DHomModel,
    kl_divergence,
    kl_from_logits,
    last_layer_predict,
    last_layer_sample_grad,
    lemma_bound_eval,
    relu_change_upper_bound,
    relu_fictitious_change,
    relu_srel_lower_bound,
    srel_dhom_limit_general,
    srel_dhom_upper_bound,
    srel_diag_quad_time,
    srel_generic,
    srel_last_layer_closed_form,
)
from .errors import ParameterError
from .flows import DiagQuadFlowSpec, LinearFlowSpec, ReluFlowSpec, ode_residual, rk4_trajectory
from .linalg import sym_expm_neg
from .mlp import MlpNet
from .oracles import central_difference_grad, expm_taylor, relative_error
from .sgd import SgdConfig, aggregate_runs, sgd_quad, sgd_relu

RELATIONS = {
    "<=": lambda m, t: m <= t,
    "<": lambda m, t: m < t,
    ">=": lambda m, t: m >= t,
}
# tolerance that makes each relation fail whatever is measured
FAILING = {"<=": -math.inf, "<": -math.inf, ">=": math.inf}


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    relation: str
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<32} {self.measured:<12.6g} {self.relation} {self.tolerance:<10.4g} {self.detail}"


CHECKS = []


def check(name, relation, tolerance, slow=False):
    """Register ``fn(rng) -> measured`` or ``(measured, detail)``."""

    def deco(fn):
        CHECKS.append((name, relation, tolerance, slow, fn))
        return fn

    return deco


# --- instance generators --------------------------------------------------------

def random_spd(rng, n, lo=0.5, hi=3.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * rng.uniform(lo, hi, n)) @ q.T


def random_bank(rng, K=3, p=6, per_class=8):
    return FeatureBank(tuple(np.abs(rng.standard_normal((per_class, p))) for _ in range(K)))


def random_dhom(rng):
    d = int(rng.integers(1, 4))
    m, n = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    W = rng.uniform(0.3, 2.0, (m, n)) * rng.choice([-1.0, 1.0], (m, n))
    B = rng.standard_normal((m, n, n))

    def beta(x):
        return B @ x

    return DHomModel(W, d, beta), rng.standard_normal(n), rng.standard_normal(n)


def last_layer_instance(rng):
    """Random ``(W, h, h', lambda1, N, K)`` with nonnegative (ReLU) features."""
    K, p, N = int(rng.integers(2, 5)), int(rng.integers(2, 8)), int(rng.integers(10, 2001))
    lam = float(rng.uniform(0.01, 2.0))
    W = 0.5 * rng.standard_normal((K, p))
    h, hp = np.abs(rng.standard_normal(p)), np.abs(rng.standard_normal(p))
    return W, h, hp, lam, N, K


def reference_quad_spec():
    return DiagQuadFlowSpec(np.array([1.0, 4.0, 9.0]), np.ones(3), 1e-3, np.array([0.5, 2.0, 4.0]))


QUAD_PAIRS = (
    (np.array([1.0, -1.0, 1.0]), np.array([1.01, 0.999, 1.2])),
    (np.array([1.0, -11.0, 1.0]), np.array([1.01, 0.999, 1.2])),
)
RELU_W_STAR = np.ones(10)
RELU_X = np.full(10, 10.0)
RELU_XP = np.full(10, math.sqrt(200.0))


# --- linear algebra and flows ---------------------------------------------------

@check("linalg.expm_vs_taylor", "<=", 1e-10)
def _expm(rng):
    worst = 0.0
    for n in (1, 3, 6):
        a = random_spd(rng, n)
        for t in (0.0, 0.3, 2.0):
            worst = max(worst, relative_error(sym_expm_neg(a, t), expm_taylor(-a * t), floor=1e-12))
    return worst


def _flow_specs(rng):
    bank = random_bank(rng)
    lin = LinearFlowSpec(bank, 0.05, 1.0, 0.1 * rng.standard_normal((3, 6)))
    x = rng.standard_normal((400, 4))
    w_star = np.array([1.0, -0.5, 0.8, 0.3])
    relu = ReluFlowSpec(DatasetReal(x, np.maximum(0.0, x @ w_star)), 1.0, w_star, rng.standard_normal(4))
    quad = DiagQuadFlowSpec(np.array([1.0, 4.0, 9.0]), np.ones(3), 0.05, np.array([0.5, 2.0, 4.0]))
    return {"linear": lin, "relu": relu, "diag_quad": quad}


def _flow_rk4(kind):
    def fn(rng):
        spec = _flow_specs(rng)[kind]
        times = np.linspace(0.1, 2.0, 20)
        ode = rk4_trajectory(spec, times, 2000)
        closed = [spec.weights(t) if kind == "diag_quad" else spec.state(t) for t in times]
        return max(float(np.linalg.norm(c - o) / np.linalg.norm(o)) for c, o in zip(closed, ode))

    return fn


for _kind in ("linear", "relu", "diag_quad"):
    check(f"flows.rk4_{_kind}", "<=", 1e-7)(_flow_rk4(_kind))


@check("flows.ode_residual", "<=", 1e-6)
def _residual(rng):
    specs = _flow_specs(rng)
    return max(ode_residual(s, t) for s in specs.values() for t in (0.0, 0.5, 1.0, 3.0))


# --- elasticity ------------------------------------------------------------------

@check("elasticity.last_layer_oracle", "<=", 1e-10)
def _last_layer(rng):
    worst = 0.0
    for _ in range(100):
        W, h, hp, lam, N, K = last_layer_instance(rng)
        k = int(rng.integers(K))
        ridge = N * lam / K
        ref = srel_last_layer_closed_form(W, h, hp, k, lam, N, K)
        for eta in 10.0 ** -np.arange(1, 7):
            g = srel_generic(last_layer_predict, lambda w, x, y: last_layer_sample_grad(w, x, y, ridge),
                             W, h, hp, k, eta)
            worst = max(worst, abs(float(g) / ref - 1.0))
    return worst


@check("elasticity.dhom_limit", "<=", 1e-4)
def _dhom_limit(rng):
    worst = 0.0
    for _ in range(100):
        model, x, xp = random_dhom(rng)
        lim = srel_dhom_limit_general(model, x, xp)
        val = model.srel(x, xp, model.predict(model.weights, x) + 1.0, 1e-7)
        worst = max(worst, abs(float(val) / lim - 1.0))
    return worst


@check("elasticity.dhom_bound_violations", "<=", 0)
def _dhom_bound(rng):
    bad = 0
    for _ in range(1000):
        model, x, xp = random_dhom(rng)
        lim, ub = srel_dhom_limit_general(model, x, xp), srel_dhom_upper_bound(model, x, xp)
        bad += lim > ub * (1 + 1e-12)
    return bad


@check("elasticity.reflexivity", "<=", 1e-12)
def _reflexive(rng):
    worst = 0.0
    for _ in range(50):
        model, x, _ = random_dhom(rng)
        v = model.srel(x, x, model.predict(model.weights, x) + 1.0, 1e-3)
        worst = max(worst, abs(float(v) - 1.0))
    return worst


@check("elasticity.eta_independence", "<=", 1e-9)
def _eta_independent(rng):
    # a linear-in-weights predictor changes linearly in eta at both points
    worst = 0.0
    for _ in range(20):
        W = rng.standard_normal((3, 5))
        h, hp = rng.standard_normal(5), rng.standard_normal(5)
        vals = [float(srel_generic(last_layer_predict, lambda w, x, y: last_layer_sample_grad(w, x, y, 0.7),
                                   W, h, hp, 1, eta)) for eta in (1e-1, 1e-3, 1e-5)]
        worst = max(worst, (max(vals) - min(vals)) / max(vals))
    return worst


@check("elasticity.kl_logits_vs_probabilities", "<=", 1e-8)
def _kl(rng):
    worst = 0.0
    for _ in range(50):
        z = rng.standard_normal(4)
        zp = z + 0.1 * rng.standard_normal(4)
        ref = kl_divergence(np.exp(zp) / np.exp(zp).sum(), np.exp(z) / np.exp(z).sum())
        worst = max(worst, abs(float(kl_from_logits(zp, z)) / ref - 1.0))
    return worst


@check("elasticity.lemma_bound_violations", "<=", 0)
def _lemma(rng):
    bad = 0
    for _ in range(100):
        alpha_sq = float(rng.uniform(0.1, 3.0))
        p_sq, q_sq = rng.uniform(0.1, 3.0, 2)
        b1, b2 = rng.uniform(0.0, 3.0, 2)
        beta_sq = float(rng.uniform(0.0, 3.0))
        c1, c2 = beta_sq - b1, beta_sq - b2
        r = lemma_bound_eval(alpha_sq, b1, c1, b2, c2, p_sq, q_sq, 0.0)
        start = max(r.t1_star, r.t2_star)
        grid = start + np.linspace(0.0, 20.0 / min(p_sq, q_sq), 1000)
        out = lemma_bound_eval(alpha_sq, b1, c1, b2, c2, p_sq, q_sq, grid)
        bad += int(np.sum(out.lower_bound > out.f_value * (1 + 1e-12)))
    return bad


@check("elasticity.diag_quad_closed_form", "<=", 1e-12)
def _diag_quad(rng):
    spec = reference_quad_spec()
    worst = 0.0
    for t in (1.0, 100.0, 1000.0):
        model = DHomModel.diagonal(spec.weights(t), 2)
        for x, xp in QUAD_PAIRS:
            worst = max(worst, abs(srel_diag_quad_time(spec, x, xp, t) / srel_dhom_limit_general(model, x, xp) - 1))
    return worst


# --- ReLU gate ------------------------------------------------------------------

@check("relu.sqrt2_bound", "<=", 1e-12)
def _sqrt2(rng):
    b = relu_srel_lower_bound(RELU_X, RELU_XP)
    return abs(b - math.sqrt(2.0)), f"bound = {b:.12g}"


@check("relu.sgd_late_mean_vs_sqrt2", "<=", 0.15)
def _relu_sgd(rng):
    cfg = SgdConfig(1e-4, 100000, tuple(range(20)), ((RELU_X, RELU_XP),), record_every=50, tol=0.0)
    series = aggregate_runs(sgd_relu(RELU_W_STAR, cfg))
    late = series.values[:, series.times >= 0.8 * series.times[-1], 0]
    mean = float(np.nanmean(late))
    return abs(mean / math.sqrt(2.0) - 1.0), f"late-time mean S_rel = {mean:.6g} (20 seeds, 1e5 steps)"


@check("relu.change_bound_violations", "<=", 0)
def _relu_change(rng):
    w_star = RELU_W_STAR
    spec = ReluFlowSpec(relu_realizable(w_star, 5000, 0), 1.0, w_star, rng.standard_normal(10))
    bad = 0
    for t in np.linspace(0.0, 5.0, 40):
        for _ in range(5):
            x, xp = rng.standard_normal(10) + 0.5, rng.standard_normal(10) + 0.5
            bad += relu_fictitious_change(spec, t, 1e-3, x, xp) > relu_change_upper_bound(spec, t, 1e-3, x, xp) * (1 + 1e-9) + 1e-15
    return bad


# --- SGD ------------------------------------------------------------------------

@check("sgd.quad_vs_flow_rel_error", "<=", 0.10)
def _quad_sgd(rng):
    cfg = SgdConfig(1e-3, 200000, tuple(range(20)), QUAD_PAIRS, record_until=2000, pop_sample=0)
    recs = sgd_quad([1.0, 2.0, 3.0], np.sqrt([0.5, 2.0, 4.0]), cfg)
    series = aggregate_runs(recs)
    keep = series.times >= 50
    ref = np.column_stack([srel_diag_quad_time(reference_quad_spec(), x, xp, series.times[keep].astype(float))
                           for x, xp in QUAD_PAIRS])
    err = float(np.max(np.abs(series.mean[keep] / ref - 1.0)))
    hits = [r.hit_step for r in recs]
    if any(h is None for h in hits):
        return math.inf, "a run never reached ||w - w*|| < 1e-6"
    return err, f"all 20 runs converged by step {max(hits)}"


@check("sgd.distance_spearman", "<", -0.95)
def _distance(rng):
    from .experiments import distance_profile
    from .lab import spearman

    dist, vals = distance_profile(reference_quad_spec(), [-1.0, -11.0, 1.0], 100, 500.0)
    return spearman(dist, vals)


@check("kernels.backend_agreement", "<=", 0.0)
def _backends(rng):
    try:
        compiled = kernels.get_backend("cython")
    except ImportError:
        return 0.0, "compiled backend not built; skipped"
    python = kernels.get_backend("python")
    worst = 0.0
    for seed in range(3):
        xs = make_rng(seed, 1).standard_normal((3000, 3))
        args = (np.sqrt([0.5, 2.0, 4.0]), np.array([1.0, 2.0, 3.0]), xs, 1e-3,
                np.array([p[0] for p in QUAD_PAIRS]), np.array([p[1] for p in QUAD_PAIRS]),
                np.arange(0, 3000, 7, dtype=np.int64), 1e-6, 1e6)
        a, b = python.quad_run(*args), compiled.quad_run(*args)
        for u, v in zip(a, b):
            worst = max(worst, float(np.nanmax(np.abs(np.asarray(u, float) - np.asarray(v, float)))))
    return worst


# --- MLP --------------------------------------------------------------------------

@check("mlp.grad_vs_finite_difference", "<=", 1e-5)
def _mlp_grad(rng):
    worst = 0.0
    for i in range(20):
        head = ("identity", "softmax")[i % 2]
        depth = int(rng.integers(0, 4))
        widths = (int(rng.integers(1, 6)), *rng.integers(2, 17, depth), int(rng.integers(2, 5)))
        net = MlpNet.init(widths, head, seed=int(rng.integers(1 << 30)))
        net.params = net.params + 0.1 * rng.standard_normal(net.size)
        x = rng.standard_normal(widths[0])
        y = int(rng.integers(widths[-1])) if head == "softmax" else rng.standard_normal(widths[-1])
        fd = central_difference_grad(lambda w: net.loss_value(x, y, params=w), net.params)
        worst = max(worst, relative_error(net.grad(x, y), fd, floor=1e-6))
    return worst


@check("mlp.softmax_normalization", "<=", 1e-9)
def _softmax(rng):
    net = MlpNet.init((4, 8, 5), "softmax", 0)
    x = 30.0 * rng.standard_normal((200, 4))
    return float(np.max(np.abs(net.forward(x).sum(axis=-1) - 1.0)))


# --- experiment-scale checks ----------------------------------------------------

@check("lastlayer.two_phase_margin", ">=", 1.0, slow=True)
def _two_phase(rng):
    from .config import validate
    from .experiments import lastlayer_setting, two_phase_stats

    cfg = validate({"kind": "lastlayer"})
    worst = math.inf
    for p, dims in cfg["model"]["settings"]:
        for seed in (0, 1, 2):
            _, rec = lastlayer_setting(cfg, p, dims, seed)
            early, late, _ = two_phase_stats(rec)
            worst = min(worst, late / early)
    return worst, "min over settings and seeds of (final-window min) / (early-window max)"


@functools.lru_cache(maxsize=None)
def _neural(kind):
    from .config import validate
    from .experiments import RUNNERS, Outputs
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        return RUNNERS[kind](validate({"kind": kind}), Outputs(tmp, plots=False))


@check("neural.regression_profile_spearman", "<", -0.8, slow=True)
def _regress(rng):
    s = _neural("mlp-regress")
    return s["profile_spearman_max_after_warmup"], f"worst of {s['snapshots_after_warmup']} snapshots x 3 seeds"


@check("neural.classify_intra_wins", ">=", 0.9, slow=True)
def _classify_wins(rng):
    s = _neural("mlp-classify")
    return s["intra_win_fraction_min"], "worst inter pair and seed, after epoch 1"


@check("neural.classify_inter_trend", "<", -0.5, slow=True)
def _classify_trend(rng):
    return _neural("mlp-classify")["inter_trend_max"], "largest Spearman(step, S_rel) over inter pairs and seeds"


# --- driver -----------------------------------------------------------------------

def parse_perturb(spec):
    """``"name"`` or ``"name=value"`` (comma separated) to ``{name: tolerance or None}``."""
    out = {}
    for item in filter(None, (s.strip() for s in (spec or "").split(","))):
        name, _, value = item.partition("=")
        out[name.strip()] = float(value) if value else None
    known = {c[0] for c in CHECKS}
    unknown = sorted(set(out) - known)
    if unknown:
        raise ParameterError(f"unknown check(s) {unknown}; known: {sorted(known)}")
    return out


def run_checks(seed=0, perturb=None, slow=True, only=None, on_result=None):
    """Run the registered checks and return their :class:`CheckResult` list."""
    perturb = parse_perturb(perturb) if isinstance(perturb, str) or perturb is None else perturb
    results = []
    for name, relation, tol, is_slow, fn in CHECKS:
        if (is_slow and not slow) or (only is not None and name not in only):
            continue
        if name in perturb:
            tol = FAILING[relation] if perturb[name] is None else perturb[name]
        rng = make_rng(seed, 100 + len(results))
        try:
            out = fn(rng)
            measured, detail = out if isinstance(out, tuple) else (out, "")
            measured = float(measured)
            passed = bool(RELATIONS[relation](measured, tol)) and not math.isnan(measured)
        except Exception as exc:  # a crashing check is a failing check
            measured, detail, passed = math.nan, f"{type(exc).__name__}: {exc}", False
        res = CheckResult(name, measured, relation, tol, passed, detail)
        results.append(res)
        if on_result:
            on_result(res)
    return results


def write_report(results, path):
    """CSV report with one row per check."""
    return write_csv(path, "verify_report/1", ["check", "measured", "relation", "tolerance", "passed", "detail"],
                     ([r.name, r.measured, r.relation, r.tolerance, int(r.passed), r.detail] for r in results))

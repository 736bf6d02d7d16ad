"""SGD / GD simulators for the three solvable models with in-loop S_rel tracking.

Each stochastic run draws its whole input stream up front from
``make_rng(seed, 1)`` so that the compiled and pure-Python kernels see
identical samples, and a held-out set from ``make_rng(seed, 2)`` for the
population-loss estimate.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .csvio import write_csv
from .data import make_rng
from .elasticity import SRelSeries, srel_last_layer_closed_form
from .errors import ParameterError, ShapeError
from .linalg import as_vector

DIVERGENCE_NORM = 1e6
INSTABILITY_RUN = 10


@dataclass(frozen=True)
class SgdConfig:
    """Step length, horizon, seeds and the tracked ``(x, x')`` pairs.

    S_rel is recorded at every ``record_every``-th step up to ``record_until``
    (default: ``steps``). Runs stop early once all records are taken and
    ``||w - w*|| < tol``.
    """

    eta: float
    steps: int
    seeds: tuple
    track_pairs: tuple
    record_every: int = 1
    record_until: int | None = None
    tol: float = 1e-6
    pop_sample: int = 4000
    pair_ids: tuple | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ParameterError(f"eta must be positive, got {self.eta}")
        if len(self.seeds) == 0:
            raise ParameterError("seeds must be nonempty")
        if self.record_every < 1:
            raise ParameterError("record_every must be at least 1")
        if self.steps < 0:
            raise ParameterError("steps must be nonnegative")
        if self.pair_ids is not None and len(self.pair_ids) != len(self.track_pairs):
            raise ParameterError("need one pair id per tracked pair")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def record_steps(self):
        last = self.steps if self.record_until is None else min(self.record_until, self.steps)
        return np.arange(0, last + 1, self.record_every, dtype=np.int64)

    @property
    def ids(self):
        return tuple(self.pair_ids) if self.pair_ids is not None else tuple(f"p{i}" for i in range(len(self.track_pairs)))


@dataclass
class RunRecord:
    """One training run sampled at ``steps``; ``srel`` has one column per tracked pair."""

    seed: int | None
    steps: np.ndarray
    srel: np.ndarray
    emp_loss: np.ndarray
    pair_ids: tuple
    snapshots: np.ndarray | None = None
    pop_loss: np.ndarray | None = None
    hit_step: int | None = None
    steps_run: int = 0
    aborted: str | None = None
    final_weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self):
        return self.aborted is None


def _pairs(config, dim):
    if len(config.track_pairs) == 0:
        return np.zeros((0, dim)), np.zeros((0, dim))
    px = np.array([np.asarray(a, dtype=float) for a, _ in config.track_pairs])
    pxp = np.array([np.asarray(b, dtype=float) for _, b in config.track_pairs])
    if px.shape[1] != dim or pxp.shape[1] != dim:
        raise ShapeError(f"tracked points must have dimension {dim}")
    return px, pxp


def _quad_loss(W, w_star, X):
    r = X @ (w_star**2) - (W**2) @ X.T
    return 0.5 * np.mean(r * r, axis=-1)


def _relu_loss(W, w_star, X):
    r = np.maximum(0.0, X @ w_star) - np.maximum(0.0, W @ X.T)
    return 0.5 * np.mean(r * r, axis=-1)


def _stochastic(kind, w0_for, w_star, config, backend):
    mod = kernels if backend is None else kernels.get_backend(backend)
    run = mod.quad_run if kind == "quad" else mod.relu_run
    loss_fn = _quad_loss if kind == "quad" else _relu_loss
    w_star = as_vector(w_star, "w_star")
    n = w_star.size
    px, pxp = _pairs(config, n)
    rec = config.record_steps
    out = []
    for seed in config.seeds:
        w0 = as_vector(w0_for(seed), "w0")
        if w0.size != n:
            raise ShapeError("w0 and w_star must share one dimension")
        xs = make_rng(seed, 1).standard_normal((config.steps, n))
        srel, snaps, loss, hit, div, ran = run(
            w0, w_star, xs, config.eta, px, pxp, rec, config.tol, DIVERGENCE_NORM
        )
        if rec.size and config.steps > 0:
            # nothing has been trained at step 0: report the loss on the first sample
            loss[0] = loss_fn(w0, w_star, xs[:1])
        pop = None
        if config.pop_sample > 0:
            held = make_rng(seed, 2).standard_normal((config.pop_sample, n))
            pop = np.full(rec.size, np.nan)
            done = ~np.isnan(snaps[:, 0])
            if done.any():
                pop[done] = loss_fn(snaps[done], w_star, held)
        out.append(
            RunRecord(
                seed=seed,
                steps=rec.copy(),
                srel=srel,
                emp_loss=loss,
                pair_ids=config.ids,
                snapshots=snaps,
                pop_loss=pop,
                hit_step=None if hit < 0 else hit,
                steps_run=ran,
                aborted=None if div < 0 else f"diverged at step {div}",
            )
        )
    return out


def sgd_quad(w_star, w0, config, backend=None):
    """SGD ``w <- w + 2 eta (sum_p x_p (w*_p^2 - w_p^2)) x * w`` on fresh normal inputs, one run per seed."""
    return _stochastic("quad", lambda seed: w0, w_star, config, backend)


def sgd_relu(w_star, config, w0=None, backend=None):
    """Indicator-gated SGD for a realizable ReLU gate, one run per seed.

    Without ``w0`` each run starts from standard normal weights drawn from ``make_rng(seed, 0)``.
    """
    w_star = as_vector(w_star, "w_star")

    def start(seed):
        if w0 is not None:
            return w0
        return make_rng(seed, 0).standard_normal(w_star.size)

    return _stochastic("relu", start, w_star, config, backend)


def random_last_layer_init(num_classes, p, seed, scale=1e-3):
    """Small Gaussian last-layer weights with entry variance ``scale^2 / p``."""
    return scale / np.sqrt(p) * make_rng(seed, 3).standard_normal((num_classes, p))


def last_layer_loss(spec, W):
    """Empirical ridge loss ``1/2 - sum_q <w_q, u_q> + 1/2 sum_q w_q^T M w_q``."""
    return 0.5 - float(np.sum(W * spec.U)) + 0.5 * float(np.sum((W @ spec.M) * W))


def gd_last_layer(spec, steps, record_every, pair, seed=None):
    """Full-batch GD with step ``theta^2`` on the last-layer ridge loss.

    ``pair = ((k, i), (c, j))`` tracks sampled point ``h_{k,i}`` against test point
    ``h_{c,j}``. Ten consecutive rising loss records mark the run unstable.
    """
    (k, i), (c, j) = pair
    bank = spec.features
    h, hp = bank.features[k][i], bank.features[c][j]
    step = spec.theta**2
    K, N = bank.num_classes, bank.total
    rec = np.arange(0, steps + 1, record_every, dtype=np.int64)
    srel = np.full((rec.size, 1), np.nan)
    loss = np.full(rec.size, np.nan)
    W = spec.w0.copy()
    drive = spec.beta_sq * spec.U
    rises, aborted, ri = 0, None, 0
    for t in range(steps + 1):
        if ri < rec.size and rec[ri] == t:
            v = srel_last_layer_closed_form(W, h, hp, k, spec.lambda1, N, K)
            srel[ri, 0] = np.nan if v is None else v
            loss[ri] = last_layer_loss(spec, W)
            if ri > 0 and loss[ri] > loss[ri - 1]:
                rises += 1
            else:
                rises = 0
            ri += 1
            if rises >= INSTABILITY_RUN or not np.isfinite(loss[ri - 1]):
                aborted = f"unstable at step {t}"
                break
        if t == steps:
            break
        W = W - step * (W @ spec.M - drive)
    return RunRecord(
        seed=seed,
        steps=rec,
        srel=srel,
        emp_loss=loss,
        pair_ids=(f"{k}.{i}->{c}.{j}",),
        steps_run=t,
        aborted=aborted,
        final_weights=W,
    )


def aggregate_runs(records):
    """Stack runs (ordered by seed) into an :class:`SRelSeries`."""
    if not records:
        raise ParameterError("no runs to aggregate")
    order = sorted(range(len(records)), key=lambda r: (records[r].seed is None, records[r].seed or 0, r))
    recs = [records[r] for r in order]
    steps = recs[0].steps
    for r in recs[1:]:
        if not np.array_equal(r.steps, steps) or r.pair_ids != recs[0].pair_ids:
            raise ParameterError("runs do not share one step grid and pair set")
    values = np.stack([r.srel for r in recs])
    run_ids = [str(r.seed) if r.seed is not None else str(i) for i, r in enumerate(recs)]
    return SRelSeries(steps, list(recs[0].pair_ids), values, run_ids)


def write_run_records(records, path):
    """CSV with columns step, run_id, pair_id, srel, emp_loss, pop_loss."""

    def rows():
        for r in records:
            pop = r.pop_loss if r.pop_loss is not None else np.full(r.steps.size, np.nan)
            for si, step in enumerate(r.steps):
                for pi, pid in enumerate(r.pair_ids):
                    yield [int(step), r.seed, pid, r.srel[si, pi], r.emp_loss[si], pop[si]]

    return write_csv(path, "run_record/1", ["step", "run_id", "pair_id", "srel", "emp_loss", "pop_loss"], rows())

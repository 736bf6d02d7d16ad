"""Toy neural-network elasticity experiments.

Regression: an MLP fits ``y = ||x||_1`` and S_rel is tracked between a fixed
test point and a fan of sampled points at growing distance.

Classification: an MLP with a softmax head separates Gaussian classes and the
class-pair smoothed KL S_rel is tracked for every ordered pair of classes.

Training uses minibatch updates; every fictitious update behind S_rel uses a
single sample.
"""
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .csvio import write_csv
from .data import make_rng
from .elasticity import UNDEFINED_RTOL, SRelSeries, kl_from_logits, srel_generic
from .errors import NumericFailure, ParameterError
from .mlp import MlpNet

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings and the S_rel recording schedule.

    ``records_per_epoch`` evenly spaced records are taken per epoch plus one at
    the end. ``srel_eta`` is the fictitious step (defaults to ``eta``).
    """

    optimizer: str = "sgd"
    eta: float = 0.05
    batch: int = 16
    epochs: int = 20
    seeds: tuple = (0, 1, 2)
    records_per_epoch: int = 1
    k: int = 20
    srel_eta: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ParameterError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not self.eta > 0:
            raise ParameterError("eta must be positive")
        if self.batch < 1 or self.k < 1 or self.epochs < 1 or self.records_per_epoch < 1:
            raise ParameterError("batch, k, epochs and records_per_epoch must be at least 1")
        if len(self.seeds) == 0:
            raise ParameterError("seeds must be nonempty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def fictitious_eta(self):
        return self.eta if self.srel_eta is None else self.srel_eta


class _Adam:
    def __init__(self, cfg, size):
        self.cfg, self.m, self.v, self.t = cfg, np.zeros(size), np.zeros(size), 0

    def __call__(self, params, g):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        mhat = self.m / (1 - c.beta1**self.t)
        vhat = self.v / (1 - c.beta2**self.t)
        return params - c.eta * mhat / (np.sqrt(vhat) + c.adam_eps)


def make_optimizer(cfg, size):
    """Return ``step(params, grad) -> new_params``."""
    if cfg.optimizer == "adam":
        return _Adam(cfg, size)
    return lambda params, g: params - cfg.eta * g


def train(net, X, Y, cfg, seed, on_record=None):
    """Minibatch training in place; ``on_record(step, epoch)`` fires on the schedule.

    Returns the list of recorded steps. Raises :class:`NumericFailure` if the
    parameters or the minibatch loss stop being finite.
    """
    N = X.shape[0]
    per_epoch = -(-N // cfg.batch)
    every = max(1, per_epoch // cfg.records_per_epoch)
    rng = make_rng(seed, 5)
    opt = make_optimizer(cfg, net.size)
    steps, step = [], 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(N)
        for s in range(0, N, cfg.batch):
            if step % every == 0 and (step // every) < cfg.records_per_epoch * (epoch + 1):
                steps.append(step)
                if on_record:
                    on_record(step, epoch)
            idx = perm[s:s + cfg.batch]
            net.params = opt(net.params, net.grad(X[idx], Y[idx]))
            step += 1
        with np.errstate(over="ignore", invalid="ignore"):
            finite = np.all(np.isfinite(net.params)) and np.isfinite(net.loss_value(X[idx], Y[idx]))
        if not finite:
            raise NumericFailure(f"training diverged in epoch {epoch} (seed {seed})")
    steps.append(step)
    if on_record:
        on_record(step, cfg.epochs)
    return steps


def steps_per_epoch(n, cfg):
    return -(-n // cfg.batch)


def spearman(a, b):
    """Spearman rank correlation ignoring NaN entries (NaN if fewer than 3 remain or constant)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    keep = ~(np.isnan(a) | np.isnan(b))
    if keep.sum() < 3 or np.ptp(a[keep]) == 0 or np.ptp(b[keep]) == 0:
        return float("nan")
    return float(spearmanr(a[keep], b[keep]).statistic)


# --- regression ---------------------------------------------------------------

def distance_fan(x_prime, radii, seed):
    """Points ``x' + r u_r`` with independent uniformly random unit directions ``u_r``."""
    x_prime = np.asarray(x_prime, dtype=float)
    U = make_rng(seed, 6).standard_normal((len(radii), x_prime.size))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return x_prime + np.asarray(radii, dtype=float)[:, None] * U


@dataclass
class RegressionResult:
    steps: np.ndarray
    distances: np.ndarray
    profiles: np.ndarray  # seed x time x fan point
    pairs: SRelSeries
    final_loss: np.ndarray
    seeds: tuple

    def profile_spearman(self):
        """Spearman of S_rel against distance, per seed and recorded time."""
        return np.array([[spearman(self.distances, prof) for prof in run] for run in self.profiles])

    def mean_profile(self):
        with np.errstate(invalid="ignore"):
            return np.nanmean(self.profiles, axis=0)


def _label_fn(dataset_label):
    if dataset_label == "l1":
        return lambda x: float(np.abs(x).sum())
    return dataset_label


def _dataset_for(dataset, seed):
    return dataset(seed) if callable(dataset) else dataset


def train_regression_srel(cfg, dataset, widths, x_prime, fan, pairs, pair_ids=None, label=None):
    """Train regression nets (one per seed) and track S_rel on the probe geometry.

    ``dataset`` is a :class:`~elastlab.data.DatasetReal` shared by all seeds or
    a callable ``seed -> DatasetReal``.

    ``fan`` rows are the sampled points of the distance profile (tested at
    ``x_prime``); ``pairs`` are ``(x, x')`` tuples for the time series. Labels
    of probe points come from ``label(x)`` (default ``||x||_1``).
    """
    label = _label_fn("l1" if label is None else label)
    x_prime = np.asarray(x_prime, dtype=float)
    fan = np.atleast_2d(np.asarray(fan, dtype=float))
    eta = cfg.fictitious_eta
    profiles, pair_vals, losses, steps = [], [], [], None
    for seed in cfg.seeds:
        data = _dataset_for(dataset, seed)
        net = MlpNet.init(widths, "identity", seed)
        prof, pv = [], []

        def predict(w, x):
            return net.forward(x, w)

        def grad_loss(w, x, y):
            return net.grad(x, y, params=w)

        def record(step, epoch):
            w = net.params
            prof.append([float(srel_generic(predict, grad_loss, w, x, x_prime, label(x), eta)) for x in fan])
            pv.append([float(srel_generic(predict, grad_loss, w, x, xp, label(x), eta)) for x, xp in pairs])

        steps = np.asarray(train(net, data.x, data.y, cfg, seed, record))
        profiles.append(prof)
        pair_vals.append(pv)
        losses.append(net.loss_value(data.x, data.y))
    ids = list(pair_ids) if pair_ids is not None else [f"pair{i}" for i in range(len(pairs))]
    series = SRelSeries(steps, ids, np.array(pair_vals).reshape(len(cfg.seeds), steps.size, len(pairs)),
                        [str(s) for s in cfg.seeds])
    return RegressionResult(steps, np.linalg.norm(fan - x_prime, axis=1), np.array(profiles), series,
                            np.array(losses), cfg.seeds)


# --- classification -----------------------------------------------------------

def smoothed_kl_matrix(net, probes, eta):
    """Smoothed KL S_rel for every ordered class pair.

    ``probes[c]`` holds the ``k`` fixed points of class ``c``. Entry ``[c1, c2]``
    averages S_rel over test points of ``c1`` and sampled points of ``c2``,
    skipping undefined pairs. Returns ``(S, defined_counts)``.
    """
    C = len(probes)
    sizes = [len(p) for p in probes]
    allp = np.vstack(probes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    Z0 = net.logits(allp)
    total = np.zeros((C, C))
    count = np.zeros((C, C), dtype=int)
    for c2 in range(C):
        for j, x in enumerate(probes[c2]):
            w_plus = net.params - eta * net.grad(x, c2)
            kl = kl_from_logits(net.logits(allp, w_plus), Z0)
            den = kl[offsets[c2] + j]
            if not (np.isfinite(den) and den >= UNDEFINED_RTOL):
                continue
            for c1 in range(C):
                seg = kl[offsets[c1]:offsets[c1 + 1]]
                ok = np.isfinite(seg)
                total[c1, c2] += float(np.sum(seg[ok] / den))
                count[c1, c2] += int(ok.sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan), count


@dataclass
class ClassifyResult:
    steps: np.ndarray
    per_epoch: int
    values: np.ndarray  # seed x time x C (test) x C (sampled)
    counts: np.ndarray
    final_loss: np.ndarray
    seeds: tuple

    @property
    def num_classes(self):
        return self.values.shape[-1]

    def series(self):
        C = self.num_classes
        ids = [f"{c1}->{c2}" for c1 in range(C) for c2 in range(C)]
        vals = self.values.reshape(self.values.shape[0], self.values.shape[1], C * C)
        return SRelSeries(self.steps, ids, vals, [str(s) for s in self.seeds])

    def intra_wins(self, after_step=None):
        """Per seed and ordered inter pair ``(c1, c2)``: fraction of recorded times
        (at or after ``after_step``, default one epoch) with ``S[c2, c2] > S[c1, c2]``."""
        after_step = self.per_epoch if after_step is None else after_step
        mask = self.steps >= after_step
        C = self.num_classes
        out = np.full((self.values.shape[0], C, C), np.nan)
        for c2 in range(C):
            for c1 in range(C):
                if c1 != c2:
                    v = self.values[:, mask]
                    out[:, c1, c2] = np.mean(v[:, :, c2, c2] > v[:, :, c1, c2], axis=1)
        return out

    def inter_trend(self):
        """Spearman correlation of each inter-class series with training step, per seed."""
        C = self.num_classes
        out = np.full((self.values.shape[0], C, C), np.nan)
        for s in range(self.values.shape[0]):
            for c1 in range(C):
                for c2 in range(C):
                    if c1 != c2:
                        out[s, c1, c2] = spearman(self.steps, self.values[s, :, c1, c2])
        return out


def train_classify_srel(cfg, dataset, widths):
    """Train softmax nets (one per seed) and track class-pair smoothed S_rel.

    ``dataset`` is a :class:`~elastlab.data.DatasetClass` shared by all seeds or
    a callable ``seed -> DatasetClass``. Each class contributes its first
    ``cfg.k`` points as the fixed probe set.
    """
    eta = cfg.fictitious_eta
    values, counts, losses, steps, n = [], [], [], None, None
    for seed in cfg.seeds:
        data = _dataset_for(dataset, seed)
        C = data.num_classes
        if widths[-1] != C:
            raise ParameterError(f"output width {widths[-1]} does not match {C} classes")
        probes = []
        for c in range(C):
            pts = data.points_of(c)
            if pts.shape[0] < cfg.k:
                raise ParameterError(f"class {c} has {pts.shape[0]} points, fewer than k = {cfg.k}")
            probes.append(pts[:cfg.k])
        n = len(data)
        net = MlpNet.init(widths, "softmax", seed)
        vs, cs = [], []

        def record(step, epoch):
            S, n = smoothed_kl_matrix(net, probes, eta)
            vs.append(S)
            cs.append(n)

        steps = np.asarray(train(net, data.x, data.labels, cfg, seed, record))
        values.append(vs)
        counts.append(cs)
        losses.append(net.loss_value(data.x, data.labels))
    return ClassifyResult(steps, steps_per_epoch(n, cfg), np.array(values), np.array(counts),
                          np.array(losses), cfg.seeds)


def write_series_summary(series, path):
    """Mean/std/defined-count CSV (columns step, pair, mean, std, defined_count)."""
    mean, std, cnt = series.mean, series.std, series.defined_count

    def rows():
        for ti, t in enumerate(series.times):
            for pi, pid in enumerate(series.pair_ids):
                yield [int(t), pid, mean[ti, pi], std[ti, pi], int(cnt[ti, pi])]

    return write_csv(path, "neural_series/1", ["step", "pair", "mean", "std", "defined_count"], rows())

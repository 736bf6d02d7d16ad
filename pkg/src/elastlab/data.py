"""Seeded synthetic datasets, random ReLU features, and moment estimators.

All randomness comes from numpy's PCG64 bit generator seeded explicitly, with
normal variates from numpy's ziggurat transform. Same seed and parameters give
bit-identical arrays on every platform numpy supports.
"""
from dataclasses import dataclass, field

import numpy as np

from .csvio import read_csv, write_csv
from .errors import ParameterError, ShapeError
from .linalg import as_vector


def make_rng(seed, *stream):
    """PCG64 generator for ``seed``; extra ``stream`` ints select an independent substream."""
    return np.random.Generator(np.random.PCG64([int(seed), *map(int, stream)]))


@dataclass(frozen=True)
class DatasetReal:
    x: np.ndarray
    y: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ShapeError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if not np.all(np.isfinite(y)):
            raise ParameterError("labels must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]


@dataclass(frozen=True)
class DatasetClass:
    x: np.ndarray
    labels: np.ndarray
    num_classes: int
    seed: int | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if x.shape[0] != labels.shape[0]:
            raise ShapeError(f"{x.shape[0]} inputs but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ParameterError(f"class indices must lie in [0, {self.num_classes})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def points_of(self, c):
        return self.x[self.labels == c]


@dataclass(frozen=True)
class FeatureBank:
    """Per-class feature vectors; ``features[k]`` has shape ``(n_k, p)``."""

    features: tuple
    weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        feats = tuple(np.atleast_2d(np.asarray(h, dtype=float)) for h in self.features)
        dims = {h.shape[1] for h in feats}
        if len(dims) > 1:
            raise ShapeError(f"feature vectors disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "features", feats)

    @property
    def num_classes(self):
        return len(self.features)

    @property
    def counts(self):
        return tuple(h.shape[0] for h in self.features)

    @property
    def total(self):
        return sum(self.counts)

    @property
    def dim(self):
        return self.features[0].shape[1]

    def stacked(self):
        return np.vstack(self.features)


def _alpha(tag):
    if tag in (None, "zero"):
        return lambda x: np.zeros(np.atleast_2d(x).shape[0])
    if tag == "l1":
        return lambda x: np.abs(np.atleast_2d(x)).sum(axis=1)
    raise ParameterError(f"unknown alpha function {tag!r}; expected 'zero' or 'l1'")


def alpha_function(tag):
    """Scalar offset function by tag: ``'zero'`` or ``'l1'`` (the l1 norm)."""
    f = _alpha(tag)

    def alpha(x):
        x = np.asarray(x, dtype=float)
        out = f(x)
        return float(out[0]) if x.ndim == 1 else out

    return alpha


def gaussian_blobs(dims, means, variances, n_per_class, seed):
    """Isotropic Gaussian classes.

    ``means[c]`` is either a scalar (same mean on every coordinate) or a vector
    of length ``dims``; ``variances[c]`` is a positive per-coordinate variance.
    """
    if len(means) != len(variances):
        raise ParameterError("need one mean and one variance per class")
    if n_per_class < 1:
        raise ParameterError("n_per_class must be at least 1")
    rng = make_rng(seed)
    xs, labels = [], []
    for c, (mu, var) in enumerate(zip(means, variances)):
        if not var > 0:
            raise ParameterError(f"variance of class {c} must be positive, got {var}")
        mu = np.broadcast_to(np.asarray(mu, dtype=float), (dims,))
        xs.append(mu + np.sqrt(var) * rng.standard_normal((n_per_class, dims)))
        labels.append(np.full(n_per_class, c))
    return DatasetClass(np.vstack(xs), np.concatenate(labels), len(means), seed)


def l1_norm_regression(dims, n, seed):
    """Standard normal inputs labelled by their l1 norm."""
    if dims < 1 or n < 1:
        raise ParameterError("dims and n must be positive")
    x = make_rng(seed).standard_normal((n, dims))
    return DatasetReal(x, np.abs(x).sum(axis=1), seed)


def relu_realizable(w_star, n, seed):
    """Standard normal inputs labelled by a ReLU gate with weights ``w_star``."""
    w_star = as_vector(w_star, "w_star")
    x = make_rng(seed).standard_normal((n, w_star.size))
    return DatasetReal(x, np.maximum(0.0, x @ w_star), seed)


def quad_feature_labels(w_star, n, seed, alpha="zero"):
    """Labels ``alpha(x) + <x, w_star**2>`` on standard normal inputs."""
    w_star = as_vector(w_star, "w_star")
    x = make_rng(seed).standard_normal((n, w_star.size))
    return DatasetReal(x, _alpha(alpha)(x) + x @ (w_star**2), seed)


def random_relu_features(input_dim, p, dataset, seed, weights=None):
    """Features ``ReLU(W_r x)`` of every point, grouped by class.

    ``W_r`` has i.i.d. standard normal entries scaled by ``1/sqrt(input_dim)``
    unless ``weights`` is given (used by tests to pin the map).
    """
    if len(dataset) == 0:
        raise ParameterError("dataset is empty")
    if weights is None:
        weights = make_rng(seed, 7).standard_normal((p, input_dim)) / np.sqrt(input_dim)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (p, input_dim):
        raise ShapeError(f"feature weights must have shape {(p, input_dim)}, got {weights.shape}")
    feats = tuple(
        np.maximum(0.0, dataset.points_of(c) @ weights.T) for c in range(dataset.num_classes)
    )
    return FeatureBank(feats, weights)


def estimate_moments(dataset, beta="coordinate", alpha="zero"):
    """Sample moments ``a_q = E[(y - alpha(x)) beta_qq(x)]`` and ``b_pq = E[beta_pp beta_qq]``.

    ``b`` is returned as a full matrix so the diagonality assumption can be
    inspected. Only coordinate features ``beta_qq(x) = x_q`` are built in;
    a callable mapping an ``(n, d)`` batch to its ``(n, d)`` diagonal features
    is also accepted.
    """
    if len(dataset) == 0:
        raise ParameterError("dataset is empty")
    if beta == "coordinate":
        feats = dataset.x
    elif callable(beta):
        feats = np.asarray(beta(dataset.x), dtype=float)
    else:
        raise ParameterError(f"unknown feature tag {beta!r}")
    resid = dataset.y - _alpha(alpha)(dataset.x)
    n = len(dataset)
    return feats.T @ resid / n, feats.T @ feats / n


def write_dataset_csv(dataset, path):
    d = dataset.dim
    header = [f"x_{j}" for j in range(d)]
    if isinstance(dataset, DatasetClass):
        header.append("class")
        rows = (list(x) + [int(c)] for x, c in zip(dataset.x, dataset.labels))
        schema = "dataset_class/1"
    else:
        header.append("y")
        rows = (list(x) + [y] for x, y in zip(dataset.x, dataset.y))
        schema = "dataset_real/1"
    return write_csv(path, schema, header, rows)


def read_dataset_csv(path, seed=None):
    _, header, rows = read_csv(path)
    if not header or header[-1] not in ("y", "class"):
        raise ParameterError(f"{path}: last column must be 'y' or 'class'")
    arr = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), len(header))
    x = arr[:, :-1]
    if header[-1] == "class":
        labels = arr[:, -1].astype(np.int64)
        return DatasetClass(x, labels, int(labels.max()) + 1 if labels.size else 0, seed)
    return DatasetReal(x, arr[:, -1], seed)

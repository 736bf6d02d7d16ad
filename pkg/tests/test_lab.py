import math

import numpy as np
import pytest

from elastlab.data import DatasetClass, l1_norm_regression
from elastlab.errors import ParameterError
from elastlab.lab import (
    TrainConfig,
    distance_fan,
    smoothed_kl_matrix,
    spearman,
    train,
    train_classify_srel,
    train_regression_srel,
)
from elastlab.mlp import MlpNet


def blob_classes(seed, C=3, per=40, dims=4):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(C), per)
    means = 4.0 * np.eye(C, dims)
    return DatasetClass(means[labels] + 0.5 * rng.standard_normal((C * per, dims)), labels, C, seed)


@pytest.mark.parametrize("kwargs", [
    dict(optimizer="lbfgs"), dict(eta=0.0), dict(batch=0), dict(k=0), dict(seeds=()),
])
def test_train_config_validation(kwargs):
    with pytest.raises(ParameterError):
        TrainConfig(**kwargs)


def test_fictitious_eta_default():
    assert TrainConfig(eta=0.2).fictitious_eta == 0.2
    assert TrainConfig(eta=0.2, srel_eta=1e-3).fictitious_eta == 1e-3


@pytest.mark.parametrize("a,b,expected", [
    ([1, 2, 3, 4], [10, 20, 30, 40], 1.0),
    ([1, 2, 3, 4], [4, 3, 2, 1], -1.0),
    ([1, 2, np.nan, 3, 4], [1, 2, 100, 3, 4], 1.0),
])
def test_spearman(a, b, expected):
    assert spearman(a, b) == pytest.approx(expected)


@pytest.mark.parametrize("a,b", [([1, 2], [1, 2]), ([1, 1, 1], [1, 2, 3]), ([1, np.nan, 2], [1, 2, 3])])
def test_spearman_degenerate(a, b):
    assert math.isnan(spearman(a, b))


def test_distance_fan_radii():
    xp = np.arange(5.0)
    fan = distance_fan(xp, [0.5, 1.0, 3.0], seed=2)
    np.testing.assert_allclose(np.linalg.norm(fan - xp, axis=1), [0.5, 1.0, 3.0], rtol=1e-14)


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_train_deterministic_and_lowers_loss(optimizer):
    data = l1_norm_regression(3, 200, seed=0)
    cfg = TrainConfig(optimizer=optimizer, eta=0.01 if optimizer == "sgd" else 1e-3, batch=16, epochs=5)
    nets = [MlpNet.init((3, 16, 1), "identity", seed=1) for _ in range(2)]
    before = nets[0].loss_value(data.x, data.y)
    for n in nets:
        train(n, data.x, data.y, cfg, seed=1)
    assert nets[0].params.tobytes() == nets[1].params.tobytes()
    assert nets[0].loss_value(data.x, data.y) < before


def test_record_schedule():
    data = l1_norm_regression(2, 50, seed=0)
    cfg = TrainConfig(eta=0.01, batch=10, epochs=3, records_per_epoch=1)
    steps = train(MlpNet.init((2, 4, 1), "identity", seed=0), data.x, data.y, cfg, seed=0)
    assert steps == [0, 5, 10, 15]


def test_regression_profile_point_at_x_prime_is_one():
    data = l1_norm_regression(4, 200, seed=0)
    cfg = TrainConfig(eta=0.01, batch=32, epochs=2, seeds=(0,), srel_eta=1e-3)
    xp = np.array([0.5, -0.2, 0.1, 0.3])
    res = train_regression_srel(cfg, data, (4, 16, 1), xp, np.vstack([xp, xp + 1]), [(xp, xp + 0.5)])
    np.testing.assert_allclose(res.profiles[0, :, 0], 1.0, rtol=1e-9)
    assert res.distances[0] == 0.0
    assert res.pairs.values.shape == (1, res.steps.size, 1)
    assert res.profile_spearman().shape == (1, res.steps.size)


def test_smoothed_kl_diagonal_self_term():
    # a single probe per class: the diagonal is x compared with itself
    net = MlpNet.init((4, 8, 3), "softmax", seed=0)
    probes = [p[:1] for p in (blob_classes(0).points_of(c) for c in range(3))]
    S, n = smoothed_kl_matrix(net, probes, 1e-3)
    np.testing.assert_allclose(np.diag(S), 1.0, rtol=1e-9)
    assert np.all(n == 1)


def test_classify_shapes_and_determinism():
    cfg = TrainConfig(eta=0.05, batch=16, epochs=3, seeds=(0, 1), k=5)
    a = train_classify_srel(cfg, blob_classes, (4, 8, 3))
    b = train_classify_srel(cfg, blob_classes, (4, 8, 3))
    assert a.values.shape == (2, a.steps.size, 3, 3)
    assert a.values.tobytes() == b.values.tobytes()
    wins = a.intra_wins()
    assert np.all(np.isnan(np.diagonal(wins, axis1=1, axis2=2)))
    assert a.series().values.shape == (2, a.steps.size, 9)


def test_classify_too_few_points():
    cfg = TrainConfig(epochs=1, seeds=(0,), k=50)
    with pytest.raises(ParameterError, match="fewer than k"):
        train_classify_srel(cfg, blob_classes(0), (4, 8, 3))


def test_classify_width_mismatch():
    with pytest.raises(ParameterError, match="does not match"):
        train_classify_srel(TrainConfig(epochs=1, seeds=(0,), k=5), blob_classes(0), (4, 8, 2))


def test_single_class_is_degenerate():
    # one class: softmax is constant 1, so KL never changes and S_rel is undefined
    rng = np.random.default_rng(0)
    data = DatasetClass(rng.standard_normal((30, 2)), np.zeros(30, dtype=int), 1)
    res = train_classify_srel(TrainConfig(epochs=1, seeds=(0,), k=5), data, (2, 4, 1))
    assert np.all(np.isnan(res.values)) and np.all(res.counts == 0)

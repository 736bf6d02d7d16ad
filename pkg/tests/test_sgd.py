import math

import numpy as np
import pytest

from elastlab.csvio import read_csv
from elastlab.data import FeatureBank, gaussian_blobs, random_relu_features
from elastlab.errors import ParameterError, ShapeError
from elastlab.flows import DiagQuadFlowSpec, LinearFlowSpec
from elastlab.sgd import (
    RunRecord,
    SgdConfig,
    aggregate_runs,
    gd_last_layer,
    last_layer_loss,
    random_last_layer_init,
    sgd_quad,
    sgd_relu,
    write_run_records,
)
from elastlab.elasticity import srel_diag_quad_time

W_STAR = np.array([1.0, 2.0, 3.0])
W0 = np.sqrt([0.5, 2.0, 4.0])
PAIRS = ((np.array([1.0, -1.0, 1.0]), np.array([1.01, 0.999, 1.2])),)


def python_quad_reference(w0, w_star, xs, eta, steps):
    # the update written out in plain Python floats
    w = list(w0)
    for t in range(steps):
        x = xs[t]
        r = sum(x[p] * (w_star[p] ** 2 - w[p] ** 2) for p in range(len(w)))
        w = [w[p] + 2 * eta * r * x[p] * w[p] for p in range(len(w))]
    return np.array(w)


@pytest.mark.parametrize("kwargs", [
    dict(eta=0.0), dict(eta=1e-3, seeds=()), dict(eta=1e-3, record_every=0),
    dict(eta=1e-3, pair_ids=("a", "b")),
])
def test_config_validation(kwargs):
    base = dict(eta=1e-3, steps=10, seeds=(0,), track_pairs=PAIRS)
    base.update(kwargs)
    with pytest.raises(ParameterError):
        SgdConfig(**base)


def test_record_schedule():
    cfg = SgdConfig(1e-3, 100, (0,), PAIRS, record_every=25, record_until=60)
    assert cfg.record_steps.tolist() == [0, 25, 50]
    assert cfg.ids == ("p0",)


def test_quad_update_matches_hand_loop():
    from elastlab.data import make_rng

    cfg = SgdConfig(1e-3, 200, (4,), PAIRS, record_every=200, tol=0.0, pop_sample=0)
    rec = sgd_quad(W_STAR, W0, cfg)[0]
    xs = make_rng(4, 1).standard_normal((200, 3))
    np.testing.assert_allclose(rec.snapshots[-1], python_quad_reference(W0, W_STAR, xs, 1e-3, 200), rtol=1e-13)


@pytest.mark.slow
def test_quad_reaches_tolerance():
    cfg = SgdConfig(1e-3, 200_000, tuple(range(5)), PAIRS, record_until=100, pop_sample=0)
    for r in sgd_quad(W_STAR, W0, cfg):
        assert r.hit_step is not None and r.ok


def test_quad_fixed_at_teacher():
    cfg = SgdConfig(1e-3, 50, (0,), PAIRS, record_every=10, tol=0.0, pop_sample=0)
    r = sgd_quad(W_STAR, W_STAR, cfg)[0]
    np.testing.assert_array_equal(r.snapshots, np.tile(W_STAR, (6, 1)))
    assert np.all(np.isnan(r.srel))


def test_quad_mean_tracks_closed_form():
    cfg = SgdConfig(1e-3, 2000, tuple(range(20)), PAIRS, record_every=10, tol=0.0, pop_sample=0)
    series = aggregate_runs(sgd_quad(W_STAR, W0, cfg))
    spec = DiagQuadFlowSpec(W_STAR**2, np.ones(3), 1e-3, W0**2)
    keep = series.times >= 50
    ref = srel_diag_quad_time(spec, *PAIRS[0], series.times[keep].astype(float))
    assert np.max(np.abs(series.mean[keep, 0] / ref - 1)) < 0.1


def test_quad_divergence_marker():
    cfg = SgdConfig(0.5, 500, (0,), PAIRS, record_every=1, tol=0.0, pop_sample=0)
    r = sgd_quad(W_STAR, W0, cfg)[0]
    assert not r.ok and r.aborted.startswith("diverged")


def test_quad_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_quad(W_STAR, np.ones(2), SgdConfig(1e-3, 5, (0,), PAIRS))
    with pytest.raises(ShapeError):
        sgd_quad(W_STAR, W0, SgdConfig(1e-3, 5, (0,), ((np.ones(2), np.ones(2)),)))


def test_relu_fixed_at_teacher():
    cfg = SgdConfig(1e-3, 100, (1,), (), record_every=20, tol=0.0, pop_sample=0)
    r = sgd_relu(np.ones(4), cfg, w0=np.ones(4))[0]
    np.testing.assert_array_equal(r.snapshots, np.ones((6, 4)))


def test_relu_converges():
    cfg = SgdConfig(1e-3, 100_000, (0, 1, 2), (), record_every=5000, tol=0.0, pop_sample=0)
    runs = sgd_relu(np.ones(10), cfg)
    dist = np.mean([[np.linalg.norm(s - 1.0) for s in r.snapshots] for r in runs], axis=0)
    assert np.all(np.diff(dist) <= 0)
    assert dist[-1] < 1e-3


def test_relu_late_mean_near_sqrt2():
    x, xp = np.full(10, 10.0), np.full(10, math.sqrt(200))
    cfg = SgdConfig(1e-4, 20_000, tuple(range(4)), ((x, xp),), record_every=100, tol=0.0, pop_sample=0)
    series = aggregate_runs(sgd_relu(np.ones(10), cfg))
    assert np.nanmean(series.values[:, -40:]) == pytest.approx(math.sqrt(2), rel=0.15)


def test_deterministic_runs():
    cfg = SgdConfig(1e-3, 300, (3, 9), PAIRS, record_every=7, tol=0.0)
    a, b = sgd_quad(W_STAR, W0, cfg), sgd_quad(W_STAR, W0, cfg)
    for ra, rb in zip(a, b):
        assert ra.srel.tobytes() == rb.srel.tobytes()
        assert ra.pop_loss.tobytes() == rb.pop_loss.tobytes()


def test_population_loss_recorded():
    cfg = SgdConfig(1e-3, 300, (0,), PAIRS, record_every=100, tol=0.0, pop_sample=500)
    r = sgd_quad(W_STAR, W0, cfg)[0]
    assert r.pop_loss.shape == (4,) and np.all(np.isfinite(r.pop_loss))
    assert r.pop_loss[-1] < r.pop_loss[0]


# --- aggregation --------------------------------------------------------------------

def _record(seed, values):
    v = np.asarray(values, dtype=float)[:, None]
    return RunRecord(seed, np.arange(v.shape[0]), v, np.zeros(v.shape[0]), ("p",))


def test_aggregate_mean_std():
    s = aggregate_runs([_record(0, [1.0]), _record(1, [3.0])])
    assert s.mean[0, 0] == 2.0 and s.std[0, 0] == 1.0


def test_aggregate_single_run():
    s = aggregate_runs([_record(0, [0.2, 0.4])])
    np.testing.assert_array_equal(s.mean[:, 0], [0.2, 0.4])
    np.testing.assert_array_equal(s.std[:, 0], [0.0, 0.0])


def test_aggregate_permutation_invariant(rng):
    recs = [_record(s, rng.standard_normal(5)) for s in range(6)]
    a = aggregate_runs(recs)
    b = aggregate_runs([recs[i] for i in rng.permutation(6)])
    assert a.mean.tobytes() == b.mean.tobytes() and a.std.tobytes() == b.std.tobytes()
    assert a.run_ids == b.run_ids


def test_aggregate_rejects_mismatch():
    with pytest.raises(ParameterError):
        aggregate_runs([_record(0, [1.0]), _record(1, [1.0, 2.0])])
    with pytest.raises(ParameterError):
        aggregate_runs([])


def test_run_record_csv(tmp_path):
    cfg = SgdConfig(1e-3, 20, (0,), PAIRS, record_every=10, tol=0.0, pop_sample=10)
    write_run_records(sgd_quad(W_STAR, W0, cfg), tmp_path / "r.csv")
    schema, header, rows = read_csv(tmp_path / "r.csv")
    assert schema == "run_record/1"
    assert header == ["step", "run_id", "pair_id", "srel", "emp_loss", "pop_loss"]
    assert [r[0] for r in rows] == ["0", "10", "20"]


# --- last layer GD ------------------------------------------------------------------

@pytest.fixture
def blob_spec():
    ds = gaussian_blobs(20, [1.0, 9.0], [2.0, 1.0], 100, seed=0)
    bank = random_relu_features(20, 10, ds, seed=0)
    return LinearFlowSpec(bank, 1.0, 1e-3, random_last_layer_init(2, 10, 0))


def test_init_scale():
    W = random_last_layer_init(2, 400, seed=1, scale=1e-3)
    assert W.shape == (2, 400)
    assert np.std(W) == pytest.approx(1e-3 / 20, rel=0.1)


def test_gd_zero_features():
    bank = FeatureBank((np.zeros((3, 4)), np.zeros((2, 4))))
    spec = LinearFlowSpec(bank, 1.0, 0.1, np.ones((2, 4)))
    rec = gd_last_layer(spec, 2000, 500, ((0, 0), (1, 0)))
    assert np.abs(rec.final_weights).max() < 1e-3
    assert rec.emp_loss[-1] == pytest.approx(0.5, abs=1e-6)


def test_gd_matches_flow(blob_spec):
    rec = gd_last_layer(blob_spec, 10_000, 1000, ((0, 0), (1, 0)))
    flow = blob_spec.state(10_000)
    assert np.linalg.norm(rec.final_weights - flow) / np.linalg.norm(flow) < 0.01


def test_gd_loss_monotone(blob_spec):
    lmax = np.linalg.eigvalsh(blob_spec.M)[-1]
    assert blob_spec.theta**2 <= 1 / lmax
    rec = gd_last_layer(blob_spec, 5000, 10, ((0, 0), (1, 0)))
    assert np.all(np.diff(rec.emp_loss) <= 1e-15)


def test_gd_two_phase(blob_spec):
    rec = gd_last_layer(blob_spec, 12_000, 10, ((0, 0), (1, 0)))
    L, S = rec.emp_loss, rec.srel[:, 0]
    half = int(np.argmax(L - L[-1] <= 0.5 * (L[0] - L[-1])))
    assert np.max(S[: half + 1]) < np.min(S[rec.steps >= 0.8 * rec.steps[-1]])


def test_gd_instability_marker():
    ds = gaussian_blobs(5, [1.0, 9.0], [2.0, 1.0], 20, seed=1)
    bank = random_relu_features(5, 4, ds, seed=1)
    spec = LinearFlowSpec(bank, 1.0, 1.0, random_last_layer_init(2, 4, 1))
    rec = gd_last_layer(spec, 500, 1, ((0, 0), (1, 0)))
    assert not rec.ok and rec.aborted.startswith("unstable")


def test_last_layer_loss_formula(blob_spec, rng):
    W = rng.standard_normal((2, 10))
    bank = blob_spec.features
    H = bank.stacked()
    labels = np.repeat([0, 1], bank.counts)
    E = np.eye(2)[labels]
    N, ridge = bank.total, bank.total * 1.0 / 2
    # mean per-sample loss 0.5 ||e_k - W h||^2 + 0.5 ridge ||W||^2, divided by N per class weight
    direct = 0.5 * np.sum((E - H @ W.T) ** 2) / N + 0.5 * ridge * np.sum(W * W)
    # the two differ by the constant 1/2 - 1/2 sum ||e_k||^2 / N = 0
    assert last_layer_loss(blob_spec, W) == pytest.approx(direct, rel=1e-12)

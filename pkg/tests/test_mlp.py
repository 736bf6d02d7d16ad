import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastlab.errors import ContractError, ParameterError, ShapeError
from elastlab.mlp import MlpNet, mlp_forward, mlp_grad


def fd_grad(net, x, y, h=1e-5):
    g = np.zeros(net.size)
    p = net.params.copy()
    for i in range(net.size):
        e = np.zeros(net.size)
        e[i] = h
        g[i] = (net.loss_value(x, y, params=p + e) - net.loss_value(x, y, params=p - e)) / (2 * h)
    return g


def test_zero_weights_regression_is_bias():
    net = MlpNet((3, 4, 2), "identity")
    net.layers()[-1][1][:] = [0.5, -1.0]
    np.testing.assert_array_equal(mlp_forward(net, np.array([1.0, 2.0, 3.0])), [0.5, -1.0])


def test_zero_weights_softmax_uniform():
    net = MlpNet((3, 5, 4), "softmax")
    np.testing.assert_allclose(mlp_forward(net, np.ones(3)), np.full(4, 0.25), rtol=1e-15)


def test_single_layer_is_affine(rng):
    net = MlpNet.init((3, 2), "identity", seed=1)
    net.params = rng.standard_normal(net.size)
    (W, b), = net.layers()
    x = np.array([0.5, -1.0, 2.0])
    expected = [sum(W[i, j] * x[j] for j in range(3)) + b[i] for i in range(2)]
    np.testing.assert_allclose(net.forward(x), expected, rtol=1e-14)


def test_zero_gradient_at_perfect_fit(rng):
    net = MlpNet.init((3, 6, 1), "identity", seed=2)
    x = rng.standard_normal(3)
    assert np.all(mlp_grad(net, x, net.forward(x), "squared") == 0)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("head", ["identity", "softmax"])
def test_grad_finite_difference(seed, head):
    rng = np.random.default_rng(seed)
    depth = seed % 4
    widths = (int(rng.integers(1, 5)), *rng.integers(2, 17, depth), int(rng.integers(2, 4)))
    net = MlpNet.init(widths, head, seed=seed)
    net.params = net.params + 0.1 * rng.standard_normal(net.size)
    x = rng.standard_normal(widths[0])
    y = int(rng.integers(widths[-1])) if head == "softmax" else rng.standard_normal(widths[-1])
    g, fd = net.grad(x, y), fd_grad(net, x, y)
    scale = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)
    assert np.max(np.abs(g - fd) / scale) < 1e-5


def test_grad_batch_is_mean(rng):
    net = MlpNet.init((2, 5, 3), "softmax", seed=0)
    X = rng.standard_normal((4, 2))
    y = np.array([0, 2, 1, 1])
    mean = sum(net.grad(X[i], y[i]) for i in range(4)) / 4
    np.testing.assert_allclose(net.grad(X, y), mean, rtol=1e-12, atol=1e-15)


def test_softmax_output_layer_identity(rng):
    net = MlpNet.init((3, 4, 3), "softmax", seed=5)
    x = rng.standard_normal(3)
    a = np.maximum(0, net.layers()[0][0] @ x + net.layers()[0][1])
    p = net.forward(x)
    g = net.grad(x, 1)
    W_size = 4 * 3 + 4
    gW = g[W_size:W_size + 12].reshape(3, 4)
    np.testing.assert_allclose(gW, np.outer(p - np.eye(3)[1], a), rtol=1e-12, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 100))
def test_softmax_sums_to_one(seed, scale):
    rng = np.random.default_rng(seed)
    net = MlpNet.init((4, 8, 6), "softmax", seed=seed % 1000)
    p = net.forward(scale * rng.standard_normal((10, 4)))
    assert np.all(np.abs(p.sum(-1) - 1) <= 1e-9) and np.all(p >= 0)


def test_head_loss_mismatch():
    net = MlpNet((2, 2), "softmax")
    with pytest.raises(ContractError):
        mlp_grad(net, np.ones(2), 0, "squared")


def test_shape_errors():
    net = MlpNet((3, 2), "identity")
    with pytest.raises(ShapeError):
        net.forward(np.ones(4))
    with pytest.raises(ShapeError):
        MlpNet((3, 2), "identity", params=np.ones(3))
    with pytest.raises(ParameterError):
        MlpNet((3,), "identity")
    with pytest.raises(ParameterError):
        MlpNet((3, 2), "tanh")


def test_he_init_variance():
    net = MlpNet.init((400, 300, 2), "identity", seed=0)
    W, b = net.layers()[0]
    assert np.var(W) == pytest.approx(2 / 400, rel=0.05)
    assert np.all(b == 0)


def test_init_deterministic():
    assert MlpNet.init((3, 4, 2), seed=9).params.tobytes() == MlpNet.init((3, 4, 2), seed=9).params.tobytes()

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from chemtab import nn
from chemtab.errors import ShapeError, TrainingError, UsageError


def test_glorot_bound_and_determinism():
    a = nn.glorot_uniform_init(3, 3, 5)
    assert a.shape == (3, 3)
    assert np.abs(a).max() <= 1.0
    np.testing.assert_array_equal(a, nn.glorot_uniform_init(3, 3, 5))
    with pytest.raises(UsageError):
        nn.glorot_uniform_init(0, 3, 0)


def test_glorot_variance():
    # fan_in + fan_out = 12, so bound^2 = 0.5 and the variance of U(-b, b) is b^2 / 3
    rng = np.random.default_rng(2)
    samples = np.concatenate([nn.glorot_uniform_init(6, 6, rng).ravel() for _ in range(2778)])
    assert samples.size >= 100_000
    assert np.abs(samples).max() <= np.sqrt(0.5)
    assert abs(samples.var() / (0.5 / 3.0) - 1.0) < 0.05


def test_identity_layer_and_relu():
    net = nn.MlpNetwork([nn.Layer(np.eye(2), np.zeros(2), "linear")])
    x = np.array([[1.5, -2.0], [0.0, 3.0]])
    np.testing.assert_array_equal(nn.predict(net, x), x)
    np.testing.assert_array_equal(nn.activate("relu", np.array([-1.0, 2.0])), [0.0, 2.0])


def test_two_layer_hand_oracle():
    W1 = np.array([[0.5, -1.0], [2.0, 0.25]])
    b1 = np.array([0.1, -0.2])
    W2 = np.array([[1.0, 3.0], [-0.5, 0.75]])
    b2 = np.array([0.0, 1.0])
    net = nn.MlpNetwork([nn.Layer(W1, b1, "tanh"), nn.Layer(W2, b2, "linear")])
    x = np.array([[0.3, -0.7]])
    # scalar arithmetic, one unit at a time
    h0 = np.tanh(0.5 * 0.3 + -1.0 * -0.7 + 0.1)
    h1 = np.tanh(2.0 * 0.3 + 0.25 * -0.7 - 0.2)
    expected = [1.0 * h0 + 3.0 * h1 + 0.0, -0.5 * h0 + 0.75 * h1 + 1.0]
    np.testing.assert_allclose(nn.predict(net, x)[0], expected, rtol=0, atol=1e-14)


def test_shape_checks():
    net = nn.MlpNetwork.build([3, 4, 2], "relu", seed=0)
    with pytest.raises(ShapeError):
        nn.forward(net, np.zeros((2, 4)))
    with pytest.raises(ShapeError):
        nn.MlpNetwork([nn.Layer(np.zeros((3, 2)), np.zeros(3)), nn.Layer(np.zeros((1, 2)), np.zeros(1))])
    with pytest.raises(UsageError):
        nn.Layer(np.zeros((1, 1)), np.zeros(1), "softplus")
    with pytest.raises(UsageError):
        nn.Layer(np.zeros((1, 1)), np.zeros(1), "relu", dropout=1.0)


def test_least_squares_gradient_closed_form():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(16, 3))
    y = rng.normal(size=(16, 1))
    w = rng.normal(size=(1, 3))
    net = nn.MlpNetwork([nn.Layer(w, np.zeros(1), "linear")])
    out, tape = nn.forward(net, X)
    grads, _ = nn.backward(tape, 2.0 * (out - y) / X.shape[0])
    np.testing.assert_allclose(grads[0], (2.0 * X.T @ (X @ w.T - y) / X.shape[0]).T, rtol=1e-13)


def _fd_check(net, x, upstream, h=1e-6):
    out, tape = nn.forward(net, x)
    grads, dx = nn.backward(tape, upstream)

    def f():
        return float((nn.predict(net, x) * upstream).sum())

    worst = 0.0
    for p, g in zip(net.params(), grads):
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            dn = f()
            p[idx] = old
            fd[idx] = (up - dn) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), np.linalg.norm(g), 1e-12))
    fdx = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        dn = f()
        x[idx] = old
        fdx[idx] = (up - dn) / (2 * h)
    worst = max(worst, np.linalg.norm(dx - fdx) / max(np.linalg.norm(fdx), 1e-12))
    return worst


@pytest.mark.parametrize("activation", ["tanh", "selu", "linear", "relu"])
@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(activation, seed):
    rng = np.random.default_rng(seed)
    net = nn.MlpNetwork.build([3, 5, 4, 2], activation, seed=seed)
    for layer in net.layers:
        layer.b[:] = rng.normal(scale=0.3, size=layer.b.shape)
    x = rng.normal(size=(6, 3))
    if activation == "relu":
        # keep pre-activations away from the kink so differencing is smooth
        z = x @ net.layers[0].W.T + net.layers[0].b
        if np.abs(z).min() < 1e-3:
            pytest.skip("pre-activation too close to the ReLU kink for this seed")
    upstream = rng.normal(size=(6, 2))
    assert _fd_check(net, x, upstream) <= 1e-4


def test_zero_upstream_gives_zero_gradients():
    net = nn.MlpNetwork.build([3, 4, 2], "tanh", seed=1)
    _, tape = nn.forward(net, np.ones((2, 3)))
    grads, dx = nn.backward(tape, np.zeros((2, 2)))
    assert all(not g.any() for g in grads) and not dx.any()


def test_stale_tape_rejected():
    net = nn.MlpNetwork.build([2, 3, 1], "tanh", seed=1)
    _, tape = nn.forward(net, np.ones((2, 2)))
    nn.backward(tape, np.ones((2, 1)))
    with pytest.raises(UsageError):
        nn.backward(tape, np.ones((2, 1)))
    _, tape = nn.forward(net, np.ones((2, 2)))
    net.touch()
    with pytest.raises(UsageError):
        nn.backward(tape, np.ones((2, 1)))


def test_eval_forward_is_pure():
    net = nn.MlpNetwork.build([4, 8, 3], "selu", dropout=0.3, seed=4)
    x = np.random.default_rng(0).normal(size=(5, 4))
    assert nn.predict(net, x).tobytes() == nn.predict(net, x).tobytes()
    with pytest.raises(UsageError):
        nn.forward(net, x, train=True)


def test_inverted_dropout_expectation():
    net = nn.MlpNetwork.build([3, 16, 2], "relu", dropout=0.25, seed=3)
    x = np.array([[0.4, -0.2, 0.9]])
    ref = nn.predict(net, x)[0]
    rng = np.random.default_rng(11)
    draws = np.array([nn.forward(net, x, train=True, rng=rng)[0][0] for _ in range(10_000)])
    se = draws.std(0, ddof=1) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(0) - ref) <= 3 * se)


def test_dropout_masks_reused_in_backward():
    net = nn.MlpNetwork.build([2, 6, 1], "tanh", dropout=0.5, seed=0)
    x = np.ones((3, 2))
    _, tape = nn.forward(net, x, train=True, rng=0)
    grads, _ = nn.backward(tape, np.ones((3, 1)))
    dropped = tape.masks[0] == 0.0
    # output-layer weight gradient sees zero for units dropped in every row
    dead = dropped.all(0)
    assert np.all(grads[2][0, dead] == 0.0)


# Adam


def test_adam_first_step():
    p = [np.array([0.0])]
    nn.adam_step(nn.AdamState(), p, [np.array([1.0])])
    assert p[0][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_adam_zero_gradient_and_determinism():
    st1 = nn.AdamState()
    p = [np.array([1.0, 2.0])]
    nn.adam_step(st1, p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, 2.0])
    a, b = [np.array([0.5, -0.5])], [np.array([0.5, -0.5])]
    sa, sb = st1.copy(), st1.copy()
    nn.adam_step(sa, a, [np.array([0.3, 0.1])])
    nn.adam_step(sb, b, [np.array([0.3, 0.1])])
    assert a[0].tobytes() == b[0].tobytes()


def test_adam_rejects_nan_with_block_name():
    with pytest.raises(TrainingError, match="physics.W3"):
        nn.adam_step(nn.AdamState(), [np.zeros(2)], [np.array([0.0, np.nan])], ["physics.W3"])
    with pytest.raises(ShapeError):
        nn.adam_step(nn.AdamState(), [np.zeros(2)], [np.zeros(3)])


# R^2


def test_r2_unit_cases():
    assert nn.r2([1, 2, 3], [1, 2, 4]) == 0.5
    assert nn.r2([1, 2, 3], [1, 2, 3]) == 1.0
    assert nn.r2([1, 2, 3], [2, 2, 2]) == 0.0
    with pytest.raises(UsageError):
        nn.r2([1], [1])
    with pytest.raises(ShapeError):
        nn.r2([1, 2], [1, 2, 3])


def test_r2_constant_target_uses_guard():
    assert nn.r2([2.0, 2.0], [2.0, 2.0 + 1e-7]) == pytest.approx(1 - 1e-14 / 1e-12)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.integers(2, 30), elements=st.floats(-100, 100)),
       st.floats(-50, 50))
def test_r2_shift_invariance(y, c):
    pred = y[::-1].copy()
    assert nn.r2(y + c, pred + c) == pytest.approx(nn.r2(y, pred), abs=1e-9)
    assert nn.r2(y, 1.0 * y + 0.0 * y.mean()) == 1.0


def test_r2_columns_gradient():
    rng = np.random.default_rng(0)
    t = rng.normal(size=(9, 3))
    y = rng.normal(size=(9, 3))
    vals, grad = nn.r2_columns_grad(t, y)
    np.testing.assert_allclose(vals, nn.r2_columns(t, y), rtol=1e-14)
    h = 1e-6
    for idx in [(0, 0), (4, 1), (8, 2)]:
        yp, ym = y.copy(), y.copy()
        yp[idx] += h
        ym[idx] -= h
        fd = (nn.r2_columns(t, yp).sum() - nn.r2_columns(t, ym).sum()) / (2 * h)
        assert grad[idx] == pytest.approx(fd, rel=1e-6)

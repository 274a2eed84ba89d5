import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prefixstats.errors import CheckpointError, InvalidConfig, NonFiniteGradient, ShapeMismatch
from prefixstats.nn import (
    Checkpoint,
    Mlp,
    MlpConfig,
    OneCycleSchedule,
    OptimizerState,
    adamw_step,
    fd_partial_s,
    grad,
    prefix_input,
    silu,
)
from prefixstats.normalization import NormalizationStats


def small_net(seed=0, width=8, layers=2, in_dim=3, out_dim=2):
    return Mlp.init(MlpConfig(in_dim, width, layers, out_dim, seed=seed))


def scalar_net(w0, b0, w1, b1):
    """1 -> 1 -> 1 net computing w1 * silu(w0 * x + b0) + b1."""
    return Mlp(MlpConfig(1, 1, 1, 1), [np.array([[w0]]), np.array([[w1]])], [np.array([b0]), np.array([b1])])


def linear_in_s_net(slope, in_dim=2):
    """Output = slope * s exactly: the last input column is s; silu is bypassed via
    silu(z) - silu(-z) = z."""
    w0 = np.zeros((in_dim, 2))
    w0[-1] = [1.0, -1.0]
    w1 = np.array([[slope], [-slope]])
    return Mlp(MlpConfig(in_dim, 2, 1, 1), [w0, w1], [np.zeros(2), np.zeros(1)])


def test_forward_examples():
    zero = Mlp.zeros(MlpConfig(4, 16, 3, 1))
    np.testing.assert_array_equal(zero.forward(np.random.default_rng(0).normal(size=(5, 4))), 0.0)
    ident = scalar_net(1.0, 0.0, 1.0, 0.0)
    assert ident.forward(np.array([0.0]))[0] == 0.0
    assert ident.forward(np.array([1.3]))[0] == pytest.approx(silu(1.3), rel=1e-15)
    net = small_net(seed=3)
    x = np.array([0.1, -0.2, 0.7])
    np.testing.assert_array_equal(net.forward(x), net.forward(x))


def test_forward_shape_errors():
    net = small_net()
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros(4))
    with pytest.raises(ShapeMismatch):
        Mlp(MlpConfig(3, 8, 2, 2), [np.zeros((3, 8))], [np.zeros(8)])
    with pytest.raises(InvalidConfig):
        MlpConfig(0)


def test_init_is_glorot_and_seeded():
    net = Mlp.init(MlpConfig(7, 256, 4, 1, seed=5))
    for w in net.weights:
        bound = math.sqrt(6.0 / sum(w.shape))
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.9 * bound
    assert all(np.all(b == 0) for b in net.biases)
    again = Mlp.init(MlpConfig(7, 256, 4, 1, seed=5))
    for a, b in zip(net.parameters(), again.parameters()):
        np.testing.assert_array_equal(a, b)


def _fd_gradient(net, x, upstream, h=1e-5):
    out = []
    for p in net.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = float(np.sum(net.forward(x) * upstream))
            p[idx] = old - h
            fm = float(np.sum(net.forward(x) * upstream))
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def gradient_check_error(seed=0) -> float:
    rng = np.random.default_rng(seed)
    net = small_net(seed=seed)
    x = rng.normal(size=(4, 3))
    up = rng.normal(size=(4, 2))
    exact = grad(net, x, up)
    approx = _fd_gradient(net, x, up)
    num = max(float(np.abs(a - b).max()) for a, b in zip(exact, approx))
    den = max(float(np.abs(b).max()) for b in approx)
    return num / den


def test_gradient_matches_finite_differences():
    for seed in range(3):
        assert gradient_check_error(seed) < 1e-4


def test_gradient_elementwise_relative_error():
    rng = np.random.default_rng(7)
    net = small_net(seed=7)
    x, up = rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    for a, b in zip(grad(net, x, up), _fd_gradient(net, x, up)):
        big = np.abs(b) > 1e-3
        assert np.all(np.abs(a[big] - b[big]) / np.abs(b[big]) < 1e-4)


def test_gradient_linearity_and_additivity():
    net = small_net(seed=1)
    x = np.array([[0.3, -0.1, 0.8]])
    for g in grad(net, x, np.zeros((1, 2))):
        assert np.all(g == 0)
    up = np.array([[0.5, -1.5]])
    single = grad(net, x, up)
    double = grad(net, np.vstack([x, x]), np.vstack([up, up]))
    for a, b in zip(single, double):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-14, atol=1e-15)
    with pytest.raises(ShapeMismatch):
        grad(net, x, np.zeros((1, 3)))


def test_input_gradient():
    net = small_net(seed=2, out_dim=1)
    x = np.array([[0.2, 0.4, -0.6]])
    g = net.input_gradient(x)[0]
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (net.forward(x[0] + e)[0] - net.forward(x[0] - e)[0]) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_adamw_examples():
    net = scalar_net(1.0, 0.0, 1.0, 0.0)
    before = [p.copy() for p in net.parameters()]
    adamw_step(net, OptimizerState.for_net(net, weight_decay=0.0), [np.zeros_like(p) for p in before], 0.1)
    for a, b in zip(before, net.parameters()):
        np.testing.assert_array_equal(a, b)

    state = OptimizerState.for_net(net, weight_decay=0.0)
    grads = [np.ones_like(p) for p in net.parameters()]
    adamw_step(net, state, grads, 0.1)
    assert state.step == 1
    assert net.weights[0][0, 0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), rel=1e-14)
    assert net.weights[0][0, 0] == pytest.approx(0.9, rel=1e-7)

    net = scalar_net(2.0, 0.0, 1.0, 0.0)
    adamw_step(net, OptimizerState.for_net(net, weight_decay=0.01), [np.zeros_like(p) for p in net.parameters()], 0.1)
    assert net.weights[0][0, 0] == pytest.approx(2.0 * (1 - 0.1 * 0.01), rel=1e-15)


def test_adamw_rejects_non_finite_gradients():
    net = small_net()
    before = [p.copy() for p in net.parameters()]
    state = OptimizerState.for_net(net)
    grads = [np.zeros_like(p) for p in before]
    grads[-1][0] = np.nan
    with pytest.raises(NonFiniteGradient):
        adamw_step(net, state, grads, 1e-3)
    assert state.step == 0
    for a, b in zip(before, net.parameters()):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(InvalidConfig):
        adamw_step(net, state, [np.zeros_like(p) for p in before], 0.0)


def test_one_cycle_shape():
    sched = OneCycleSchedule(max_lr=1e-3, total_steps=1000, warmup_fraction=0.3, final_lr_fraction=1e-2)
    lr = np.array([sched.lr(k) for k in range(1000)])
    warm = sched.warmup_steps
    assert np.all(lr > 0)
    assert np.all(np.diff(lr[: warm + 1]) > 0)
    assert np.all(np.diff(lr[warm:]) <= 0)
    assert lr.max() == pytest.approx(1e-3, rel=1e-12)
    assert lr[-1] == pytest.approx(1e-5, rel=1e-9)
    with pytest.raises(InvalidConfig):
        OneCycleSchedule(total_steps=0)


def test_fd_partial_on_linear_net():
    net = linear_in_s_net(2.0)
    x = np.array([[0.3]])
    for s in (0.0, 0.004, 0.3, 0.5, 0.997, 1.0):
        assert fd_partial_s(net, x, s, 1e-2) == pytest.approx(2.0, rel=1e-12)


def test_fd_partial_exact_on_quadratic():
    f = lambda x, s: s**2  # noqa: E731
    assert abs(fd_partial_s(f, np.zeros((1, 1)), 0.5, 1e-2) - 1.0) < 1e-12
    np.testing.assert_allclose(fd_partial_s(f, np.zeros((1, 1)), np.array([0.2, 0.7]), 1e-2), [0.4, 1.4], atol=1e-12)
    with pytest.raises(InvalidConfig):
        fd_partial_s(f, np.zeros((1, 1)), 0.5, 0.0)


def test_fd_partial_with_thresholds():
    net = Mlp.init(MlpConfig(3, 8, 2, 1, seed=4))
    x = np.array([[0.2], [0.5], [-0.3]])
    s = np.array([0.3, 0.6, 0.9])
    thr = np.array([-1.0, 0.0, 2.0])
    d = fd_partial_s(net, x, s, 1e-3, threshold=thr)
    exact = net.input_gradient(prefix_input(x, s, thr))[:, 1]
    np.testing.assert_allclose(d, exact, rtol=1e-5)


def test_prefix_input_layout():
    inp = prefix_input(np.array([[1.0, 2.0]]), np.array([0.5, 0.6]), 3.0)
    np.testing.assert_array_equal(inp, [[1, 2, 0.5, 3], [1, 2, 0.6, 3]])


def test_checkpoint_round_trip(tmp_path):
    net = small_net(seed=9)
    norm = NormalizationStats(np.arange(7.0), np.ones(7), 4.0, 2.0)
    ck = Checkpoint(net, norm, {"role": "prefix", "note": "x"})
    path = ck.save(tmp_path / "c.json")
    back = Checkpoint.load(path)
    for a, b in zip(net.parameters(), back.net.parameters()):
        np.testing.assert_array_equal(a, b)
    assert back.normalization == norm and back.metadata == ck.metadata
    assert back.to_json() == ck.to_json()


def test_checkpoint_validation(tmp_path):
    import json

    doc = json.loads(Checkpoint(small_net()).to_json())
    doc["format_version"] = 99
    with pytest.raises(CheckpointError):
        Checkpoint.from_json(json.dumps(doc))
    doc = json.loads(Checkpoint(small_net()).to_json())
    doc["layers"][0]["weight_shape"] = [3, 9]
    with pytest.raises(CheckpointError):
        Checkpoint.from_json(json.dumps(doc))
    with pytest.raises(CheckpointError):
        Checkpoint.from_json("not json")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 3), st.integers(2, 6))
def test_gradient_property(seed, layers, width):
    rng = np.random.default_rng(seed)
    net = Mlp.init(MlpConfig(2, width, layers, 1, seed=seed))
    x, up = rng.normal(size=(2, 2)), rng.normal(size=(2, 1))
    exact = grad(net, x, up)
    approx = _fd_gradient(net, x, up)
    scale = max(float(np.abs(b).max()) for b in approx) + 1e-12
    assert max(float(np.abs(a - b).max()) for a, b in zip(exact, approx)) / scale < 1e-4

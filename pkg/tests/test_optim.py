import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manifold_dynamics import network as nw
from manifold_dynamics import optim


def setup(seed=0, n=6, P=12):
    rng = np.random.default_rng(seed)
    m = nw.init([n, 5, 2], nw.InitConfig(seed=seed))
    x = rng.normal(size=(P, n))
    y = rng.choice([1, -1], P)
    return m, x, y


def same(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def run(m, x, y, cfg, epochs):
    st_ = optim.init_state(m, cfg)
    for e in range(epochs):
        m, st_, _ = optim.epoch(m, x, y, st_, cfg, e)
    return m


def test_zero_gradient_leaves_model():
    m, _, _ = setup()
    cfg = optim.OptimizerConfig("gd", 0.2)
    zeros = [np.zeros_like(p) for p in m.params()]
    new, _ = optim.step(m, zeros, optim.init_state(m, cfg), cfg)
    assert same(new, m)


def test_step_does_not_mutate_inputs():
    m, x, y = setup()
    before = m.copy()
    cfg = optim.OptimizerConfig("adam", 0.01)
    optim.step(m, nw.gradients(m, x, y), optim.init_state(m, cfg), cfg)
    assert same(m, before)


def test_shape_mismatch_and_missing_state():
    m, x, y = setup()
    cfg = optim.OptimizerConfig("gd")
    with pytest.raises(ValueError):
        optim.step(m, nw.gradients(m, x, y)[:-1], optim.init_state(m, cfg), cfg)
    for variant in ("gd_momentum", "adam"):
        c = optim.OptimizerConfig(variant, 0.1, momentum=0.5)
        with pytest.raises(ValueError):
            optim.step(m, nw.gradients(m, x, y), optim.OptimizerState(), c)


@pytest.mark.parametrize("kw", [
    dict(learning_rate=0.0), dict(momentum=1.0), dict(momentum=-0.1), dict(weight_decay=-1.0),
    dict(variant="sgd"), dict(variant="sgd", batch_size=0), dict(variant="rmsprop"),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        optim.OptimizerConfig(**kw)


def test_momentum_zero_equals_gd():
    m, x, y = setup(1)
    a = run(m, x, y, optim.OptimizerConfig("gd", 0.3), 7)
    b = run(m, x, y, optim.OptimizerConfig("gd_momentum", 0.3, momentum=0.0), 7)
    assert same(a, b)


def test_weight_decay_zero_equals_gd():
    m, x, y = setup(2)
    a = run(m, x, y, optim.OptimizerConfig("gd", 0.3), 7)
    b = run(m, x, y, optim.OptimizerConfig("gd_weight_decay", 0.3, weight_decay=0.0), 7)
    assert same(a, b)


def test_weight_decay_closed_form():
    m, _, _ = setup()
    cfg = optim.OptimizerConfig("gd_weight_decay", 0.2, weight_decay=0.01)
    theta = m
    zeros = [np.zeros_like(p) for p in m.params()]
    st_ = optim.init_state(m, cfg)
    for _ in range(25):
        theta, st_ = optim.step(theta, zeros, st_, cfg)
    for p0, p in zip(m.params(), theta.params()):
        assert np.allclose(p, p0 * (1 - 0.2 * 0.01) ** 25, rtol=1e-13, atol=0)


def test_weight_decay_can_spare_biases():
    m, _, _ = setup()
    cfg = optim.OptimizerConfig("gd_weight_decay", 0.2, weight_decay=0.5, decay_biases=False)
    zeros = [np.zeros_like(p) for p in m.params()]
    new, _ = optim.step(m, zeros, optim.init_state(m, cfg), cfg)
    assert np.array_equal(new.biases[0], m.biases[0])
    assert np.allclose(new.weights[0], 0.9 * m.weights[0])


def test_momentum_recurrence():
    m, _, _ = setup()
    cfg = optim.OptimizerConfig("gd_momentum", 0.5, momentum=0.5)
    g = [np.ones_like(p) for p in m.params()]
    st_ = optim.init_state(m, cfg)
    theta = m
    for _ in range(3):
        theta, st_ = optim.step(theta, g, st_, cfg)
    # velocities 1, 1.5, 1.75
    assert np.allclose(theta.weights[0], m.weights[0] - 0.5 * (1 + 1.5 + 1.75))


def _max_update(a, b):
    return max(float(np.max(np.abs(q - p))) for p, q in zip(a.params(), b.params()))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), lr=st.floats(1e-4, 0.1))
def test_adam_first_step_is_at_most_lr(seed, lr):
    m, x, y = setup(seed % 1000)
    cfg = optim.OptimizerConfig("adam", lr)
    new, _ = optim.step(m, nw.gradients(m, x, y), optim.init_state(m, cfg), cfg)
    assert _max_update(m, new) <= lr * (1 + 1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), lr=st.floats(1e-4, 0.1))
def test_adam_constant_gradient_steps_at_most_lr(seed, lr):
    m, x, y = setup(seed % 1000)
    g = nw.gradients(m, x, y)
    cfg = optim.OptimizerConfig("adam", lr)
    st_, theta = optim.init_state(m, cfg), m
    for _ in range(20):
        new, st_ = optim.step(theta, g, st_, cfg)
        assert _max_update(theta, new) <= lr * (1 + 1e-6)
        theta = new


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), lr=st.floats(1e-4, 0.1))
def test_adam_steps_within_worst_case_bound(seed, lr):
    # for arbitrary gradient sequences the update is bounded by lr (1 - b1) / sqrt(1 - b2)
    m, x, y = setup(seed % 1000)
    cfg = optim.OptimizerConfig("adam", lr)
    b1, b2 = cfg.betas
    bound = lr * (1 - b1) / np.sqrt(1 - b2)
    st_, theta = optim.init_state(m, cfg), m
    for _ in range(10):
        new, st_ = optim.step(theta, nw.gradients(theta, x, y), st_, cfg)
        assert _max_update(theta, new) <= bound * (1 + 1e-6)
        theta = new


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), act=st.sampled_from(["tanh", "silu", "identity"]))
def test_small_gd_step_decreases_loss(seed, act):
    rng = np.random.default_rng(seed)
    m = nw.init([4, 3, 2], nw.InitConfig(seed=seed % 1000), act)
    x = rng.normal(size=(8, 4))
    y = rng.choice([1, -1], 8)
    g = nw.gradients(m, x, y)
    if sum(float(np.sum(q * q)) for q in g) < 1e-12:
        return
    cfg = optim.OptimizerConfig("gd", 1e-4)
    new, _ = optim.step(m, g, optim.init_state(m, cfg), cfg)
    assert nw.loss(new, x, y) < nw.loss(m, x, y)


def test_sgd_full_batch_equals_gd():
    m, x, y = setup(3)
    a = run(m, x, y, optim.OptimizerConfig("gd", 0.2), 4)
    b = run(m, x, y, optim.OptimizerConfig("sgd", 0.2, batch_size=len(y), shuffle_seed=9), 4)
    assert same(a, b)


def test_sgd_steps_per_epoch():
    m, _, _ = setup(0, n=3)
    x = np.zeros((8192, 3))
    y = np.ones(8192, int)
    cfg = optim.OptimizerConfig("sgd", 0.01, batch_size=32)
    _, _, stats = optim.epoch(m, x, y, optim.init_state(m, cfg), cfg, 0)
    assert stats["steps"] == 256


def test_sgd_determinism_and_shuffle_dependence():
    m, x, y = setup(4, P=40)
    cfg = optim.OptimizerConfig("sgd", 0.1, batch_size=8, shuffle_seed=1)
    assert same(run(m, x, y, cfg, 2), run(m, x, y, cfg, 2))
    other = optim.OptimizerConfig("sgd", 0.1, batch_size=8, shuffle_seed=2)
    assert not same(run(m, x, y, cfg, 2), run(m, x, y, other, 2))
    assert not np.array_equal(optim.epoch_order(cfg, 40, 0), optim.epoch_order(cfg, 40, 1))


def test_mean_reduction_scales_gd_step():
    m, x, y = setup(5)
    mean = run(m, x, y, optim.OptimizerConfig("gd", 0.2 * len(y), reduction="mean"), 1)
    total = run(m, x, y, optim.OptimizerConfig("gd", 0.2, reduction="sum"), 1)
    for p, q in zip(mean.params(), total.params()):
        assert np.allclose(p, q, rtol=1e-12, atol=1e-14)

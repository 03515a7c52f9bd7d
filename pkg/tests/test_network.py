import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manifold_dynamics import network as nw

ACTS = list(nw.ACTIVATIONS)


def random_model(seed, sizes, activation):
    return nw.init(sizes, nw.InitConfig(variance_scale=1.5, seed=seed), activation)


def fd_gradients(m, x, y, h=1e-4):
    out = []
    params = m.params()
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (nw.loss(m.with_params(plus), x, y) - nw.loss(m.with_params(minus), x, y)) / (2 * h)
        out.append(g)
    return out


def max_rel_err(a, b, floor=1e-6):
    return max(float(np.max(np.abs(x - y) / np.maximum(np.abs(x) + np.abs(y), floor)))
               for x, y in zip(a, b))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), act=st.sampled_from(ACTS), n=st.integers(1, 10),
       hidden=st.lists(st.integers(1, 8), min_size=1, max_size=2), batch=st.integers(1, 16))
def test_gradient_matches_central_differences(seed, act, n, hidden, batch):
    rng = np.random.default_rng(seed)
    m = random_model(seed, [n, *hidden, 2], act)
    x = rng.normal(size=(batch, n))
    y = rng.choice([1, -1], batch)
    assert max_rel_err(nw.gradients(m, x, y), fd_gradients(m, x, y)) < 1e-5


def test_init_bounds_and_variance():
    m = nw.init([784, 20, 2], nw.InitConfig(seed=3))
    w1 = m.weights[0]
    assert np.all(np.abs(w1) < 1 / 28) and np.all(np.abs(m.biases[0]) < 1 / 28)
    assert np.all(np.abs(m.weights[1]) < 1 / math.sqrt(20))
    assert abs(w1.var() / ((1 / 784) / 3) - 1) < 0.05
    z = nw.init([784, 20, 2], nw.InitConfig(variance_scale=0.0, seed=3))
    assert all(np.all(p == 0) for p in z.params())
    again = nw.init([784, 20, 2], nw.InitConfig(seed=3))
    assert all(np.array_equal(a, b) for a, b in zip(m.params(), again.params()))


@pytest.mark.parametrize("sizes", [[], [784], [784, 20, 3], [784, 0, 2]])
def test_init_rejects_bad_architectures(sizes):
    with pytest.raises(ValueError):
        nw.init(sizes)


def test_model_validates_chaining():
    with pytest.raises(ValueError):
        nw.MLP([np.zeros((3, 4)), np.zeros((2, 5))], [np.zeros(3), np.zeros(2)])
    with pytest.raises(ValueError):
        nw.MLP([np.zeros((3, 4))], [np.zeros(3)])


def test_forward_hand_computed():
    w = np.array([[0.5, -1.0, 0.25], [1.0, 0.0, -0.5]])
    c = np.array([0.1, -0.2])
    v = np.array([[1.0, 2.0], [-1.0, 0.5]])
    b = np.array([0.3, -0.4])
    m = nw.MLP([w, v], [c, b], "tanh")
    x = [1.0, 2.0, -1.0]
    h = [math.tanh(0.5 * 1 - 1.0 * 2 + 0.25 * -1 + 0.1), math.tanh(1.0 * 1 + 0 - 0.5 * -1 - 0.2)]
    f = [1.0 * h[0] + 2.0 * h[1] + 0.3, -1.0 * h[0] + 0.5 * h[1] - 0.4]
    logits, hidden = nw.forward(m, x)
    assert np.allclose(hidden[0], h, atol=1e-15)
    assert np.allclose(logits, f, atol=1e-15)


def test_forward_linear_composition_and_zero_input():
    rng = np.random.default_rng(0)
    w = np.eye(3, 5)
    v = rng.normal(size=(2, 3))
    m = nw.MLP([w, v], [np.zeros(3), np.zeros(2)], "identity")
    x = rng.normal(size=5)
    assert np.allclose(nw.forward(m, x)[0], v @ (w @ x))
    t = nw.init([5, 4, 2], nw.InitConfig(seed=1))
    t = nw.MLP(t.weights, [np.zeros(4), np.array([0.7, -0.2])], "tanh")
    logits, hidden = nw.forward(t, np.zeros(5))
    assert np.all(hidden[0] == 0) and np.allclose(logits, [0.7, -0.2])
    with pytest.raises(ValueError):
        nw.forward(t, np.zeros(4))


def test_predict_rule():
    assert nw.predict_logits(np.array([2.0, -1.0]))[0] == 1
    assert nw.predict_logits(np.array([0.0, 0.0]))[0] == 1
    assert nw.predict_logits(np.array([-3.0, -2.5]))[0] == -1


def test_loss_examples():
    m = nw.MLP([np.zeros((3, 4)), np.zeros((2, 3))], [np.zeros(3), np.zeros(2)])
    x = np.random.default_rng(0).normal(size=(7, 4))
    assert nw.loss(m, x, np.array([1, -1, 1, 1, -1, -1, 1])) == pytest.approx(7 * math.log(2))
    assert nw.loss_from_logits(np.array([[800.0, -800.0]]), [1]) == 0.0
    with pytest.raises(ValueError):
        nw.loss(m, np.zeros((0, 4)), [])


def test_loss_against_scalar_evaluation():
    rng = np.random.default_rng(5)
    m = random_model(5, [6, 4, 2], "silu")
    x = rng.normal(size=(5, 6))
    y = rng.choice([1, -1], 5)
    logits, _ = nw.forward(m, x)
    direct = 0.0
    for f, lab in zip(logits, y):
        k = 0 if lab == 1 else 1
        direct += -math.log(math.exp(f[k]) / (math.exp(f[0]) + math.exp(f[1])))
    assert nw.loss(m, x, y) == pytest.approx(direct, rel=1e-13)
    assert direct >= 0


def test_zero_input_gradients():
    m = random_model(2, [4, 3, 2], "identity")
    g = nw.gradients(m, np.zeros((5, 4)), np.array([1, 1, -1, 1, -1]))
    assert np.all(g[0] == 0)
    assert np.any(g[1] != 0) and np.any(g[3] != 0)


def test_duplicated_batch_doubles_gradient():
    rng = np.random.default_rng(8)
    m = random_model(8, [5, 4, 2], "tanh")
    x = rng.normal(size=(6, 5))
    y = rng.choice([1, -1], 6)
    g1 = nw.gradients(m, x, y)
    g2 = nw.gradients(m, np.vstack([x, x]), np.concatenate([y, y]))
    for a, b in zip(g1, g2):
        assert np.allclose(b, 2 * a, rtol=1e-13, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), act=st.sampled_from(ACTS))
def test_hidden_permutation_equivariance(seed, act):
    rng = np.random.default_rng(seed)
    m = random_model(seed, [5, 6, 2], act)
    perm = rng.permutation(6)
    p = nw.MLP([m.weights[0][perm], m.weights[1][:, perm]], [m.biases[0][perm], m.biases[1]], act)
    x = rng.normal(size=(4, 5))
    assert np.allclose(nw.forward(m, x)[0], nw.forward(p, x)[0], rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.floats(-50, 50))
def test_predict_invariant_to_common_bias_shift(seed, shift):
    rng = np.random.default_rng(seed)
    m = random_model(seed, [5, 6, 2], "tanh")
    s = nw.MLP(m.weights, [m.biases[0], m.biases[1] + shift], "tanh")
    x = rng.normal(size=(20, 5))
    logits = nw.forward(m, x)[0]
    gap = np.abs(logits[:, 0] - logits[:, 1])
    keep = gap > 1e-9
    assert np.array_equal(nw.predict(m, x)[keep], nw.predict(s, x)[keep])


@given(seed=st.integers(0, 2**31), scale=st.floats(1e-6, 1e6))
def test_bias_free_readout_is_projective(seed, scale):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=7)
    h = rng.normal(size=7)
    if abs(v @ h) < 1e-9 * np.linalg.norm(v) * np.linalg.norm(h):
        return
    hat = h / np.linalg.norm(h)
    assert np.sign(v @ h) == np.sign(v @ hat) == np.sign(v @ (scale * h))


def test_hidden_representation_layers():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 5))
    two = random_model(0, [5, 4, 2], "tanh")
    assert np.array_equal(nw.hidden_representation(two, x), nw.forward(two, x)[1][0])
    deep = random_model(1, [5, 4, 3, 3, 2], "relu")
    first = nw.activate("relu", x @ deep.weights[0].T + deep.biases[0])
    assert np.allclose(nw.hidden_representation(deep, x, 1), first)
    with pytest.raises(IndexError):
        nw.hidden_representation(deep, x, 4)
    with pytest.raises(IndexError):
        nw.hidden_representation(deep, x, 0)


def test_checkpoint_round_trip(tmp_path):
    m = random_model(4, [5, 4, 3, 2], "leaky_relu")
    nw.save_model(m, tmp_path / "m.npz")
    back = nw.load_model(tmp_path / "m.npz")
    assert back.activation == "leaky_relu" and back.sizes == [5, 4, 3, 2]
    assert all(np.array_equal(a, b) for a, b in zip(m.params(), back.params()))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manifold_dynamics import dataio, dynamics, network as nw, optim
from manifold_dynamics.runner import RunSpec, run_single


def planted_log(T=40, t0=10):
    t = np.arange(T + 1, dtype=float)
    r = ((t - t0) ** 2 + 1) / ((T - t0) ** 2 + 1)
    d = 1 - r
    eps = np.linspace(0.5, 0.0, T + 1)
    mis = np.zeros((T + 1, 16), bool)
    for k in range(T + 1):
        mis[k, : int(round(eps[k] * 16))] = True
    return dynamics.TrajectoryLog.from_arrays(eps, r, r, d, misclassified=mis)


def test_train_max_epochs_one_gives_two_records(blobs):
    m = nw.init([blobs.n_features, 5, 2], nw.InitConfig(seed=0))
    _, log = dynamics.train(m, blobs, None, optim.OptimizerConfig(), 1)
    assert len(log) == 2 and log.epochs.tolist() == [0, 1]
    with pytest.raises(ValueError):
        dynamics.train(m, blobs, None, optim.OptimizerConfig(), 0)


def test_epoch_zero_is_pre_update(blobs):
    m = nw.init([blobs.n_features, 5, 2], nw.InitConfig(seed=0))
    _, log = dynamics.train(m, blobs, None, optim.OptimizerConfig(), 3)
    pred = nw.predict(m, blobs.inputs)
    assert log.eps_tr[0] == np.mean(pred != blobs.labels)


def test_errors_match_direct_counting(blobs):
    spec = RunSpec(hidden=(6,), max_epochs=20)
    model, log = run_single(blobs, spec, 3, test_set=blobs)
    wrong = int(np.sum(nw.predict(model, blobs.inputs) != blobs.labels))
    assert log.eps_tr[-1] == wrong / len(blobs)
    assert log.eps_test[-1] == log.eps_tr[-1]
    for t in log.epochs:
        assert log.misclassified_mask(int(t)).sum() / log.n_train == log.eps_tr[t]
        assert log.record(int(t)).eps_tr == len(log.misclassified(int(t))) / log.n_train


def test_stop_rule_fires_on_sustained_zero_error(blobs):
    spec = RunSpec(hidden=(10,), max_epochs=2000, zero_error_patience=5,
                   optimizer=optim.OptimizerConfig(learning_rate=1.0))
    easy = dataio.Dataset(blobs.inputs, np.where(blobs.inputs[:, 0] > 0, 1, -1),
                          blobs.class_ids, blobs.source_index)
    _, log = run_single(easy, spec, 0)
    assert log.meta["stopped_at"] < 2000
    assert np.all(log.eps_tr[-5:] == 0)
    assert len(log.misclassified(int(log.epochs[-1]))) == 0
    assert dynamics.StopRule(None).should_stop(np.zeros(100)) is False


def test_divergence_is_reported(blobs):
    m = nw.init([blobs.n_features, 5, 2], nw.InitConfig(seed=0, variance_scale=1.0))
    big = nw.MLP(m.weights, m.biases, "identity")
    with pytest.raises(dynamics.DivergenceError):
        dynamics.train(big, blobs, None, optim.OptimizerConfig(learning_rate=1e6, reduction="sum"), 50)


def test_zero_norm_epochs_are_flagged(blobs):
    z = nw.MLP([np.zeros((3, blobs.n_features)), np.ones((2, 3))], [np.zeros(3), np.zeros(2)], "relu")
    _, log = dynamics.train(z, blobs, None, optim.OptimizerConfig(), 2)
    assert log.meta["zero_norm_epochs"] == [0, 1, 2]
    assert np.all(np.isnan(log.r_plus))
    rep = dynamics.detect_inversion(log)
    assert rep.unconverged and np.isnan(rep.phi)


def test_bitwise_replay(blobs):
    spec = RunSpec(hidden=(6,), max_epochs=30)
    _, a = run_single(blobs, spec, 7)
    _, b = run_single(blobs, spec, 7)
    for k in ("eps_tr", "r_plus", "r_minus", "d", "loss", "packed_misclassified"):
        assert np.array_equal(getattr(a, k), getattr(b, k))
    sgd = RunSpec(hidden=(6,), max_epochs=5, optimizer=optim.OptimizerConfig("sgd", 0.05, batch_size=16))
    assert np.array_equal(run_single(blobs, sgd, 1)[1].d, run_single(blobs, sgd, 1)[1].d)


def test_epoch_at_error():
    log = planted_log()
    assert dynamics.epoch_at_error(log, 1.0) == 0
    assert dynamics.epoch_at_error(log, 0.25) == 20
    with pytest.raises(dynamics.ErrorLevelNotReached):
        dynamics.epoch_at_error(log, -0.01)


def test_detect_inversion_planted():
    rep = dynamics.detect_inversion(planted_log())
    assert rep.t_star == {"r_plus": 10, "r_minus": 10, "d": 10}
    assert rep.all_qualified() and not rep.unconverged
    assert rep.phi == pytest.approx(0.5 - 10 * 0.5 / 40)
    assert len(rep.stragglers) == round(rep.phi * 16)


def test_detect_inversion_monotone_flags_boundary():
    t = np.arange(30, dtype=float)
    r = 1 - t / 60
    log = dynamics.TrajectoryLog.from_arrays(np.linspace(0.5, 0.1, 30), r, r, t / 30)
    rep = dynamics.detect_inversion(log)
    assert rep.unconverged
    assert rep.interior == {"r_plus": False, "r_minus": False, "d": False}
    assert rep.t_star["r_plus"] == 29 and rep.t_star["d"] == 29


def test_ties_go_to_earliest_epoch():
    r = np.array([1.0, 0.5, 0.7, 0.5, 0.9])
    log = dynamics.TrajectoryLog.from_arrays(np.linspace(0.5, 0.1, 5), r, r, 2 - r)
    assert dynamics.detect_inversion(log).t_star == {"r_plus": 1, "r_minus": 1, "d": 1}


def test_prominence_guard_rejects_noise_spike():
    r = np.full(50, 0.9)
    r[20] = 0.895
    log = dynamics.TrajectoryLog.from_arrays(np.linspace(0.5, 0.1, 50), r, r, 2 - 2 * r)
    rep = dynamics.detect_inversion(log, min_prominence=0.02)
    assert rep.interior["r_plus"] and not rep.qualified("r_plus")
    assert rep.relative_prominence["r_plus"] == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), T=st.integers(5, 60))
def test_time_reversal_maps_t_star(seed, T):
    rng = np.random.default_rng(seed)
    # distinct values so the extremum is unique
    rp, rm, d = (rng.permutation(T + 1) / (T + 1) + 0.01 for _ in range(3))
    log = dynamics.TrajectoryLog.from_arrays(rng.uniform(0, 0.5, T + 1), rp, rm, d)
    fwd = dynamics.detect_inversion(log)
    back = dynamics.detect_inversion(log.reversed())
    for k in fwd.t_star:
        assert back.t_star[k] == T - fwd.t_star[k]


def test_reparameterize_strictly_decreasing():
    log = planted_log(T=15)
    eps = np.arange(16, 0, -1) / 16.0
    log = dynamics.TrajectoryLog.from_arrays(eps, log.r_plus, log.r_minus, log.d)
    curve = dynamics.reparameterize(log)
    assert len(curve.eps_tr) == 16
    assert curve.epoch.tolist() == list(range(16))


def test_reparameterize_plateau_maps_to_first_epoch():
    eps = np.array([0.5, 0.3, 0.3, 0.3, 0.35, 0.2, 0.2])
    r = np.arange(7.0)
    log = dynamics.TrajectoryLog.from_arrays(eps, r, r, r)
    curve = dynamics.reparameterize(log)
    assert curve.eps_tr.tolist() == [0.5, 0.35, 0.3, 0.2]
    assert curve.epoch.tolist() == [0, 1, 1, 5]
    assert curve.r_plus.tolist() == [0.0, 1.0, 1.0, 5.0]

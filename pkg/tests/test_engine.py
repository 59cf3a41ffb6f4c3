"""Simulation engine: step formula, determinism, statistical calibration
against exact OU facts, blow-up handling, persistence, weak order."""

import numpy as np
import pytest
from scipy.stats import kstest

from ergolab import engine
from ergolab.engine import (BlowupError, EnsembleBlowupError, SimConfig,
                            coupled_ou_endpoints, em_step, read_trajectory,
                            simulate_ensemble, simulate_path,
                            weak_error_probe, write_trajectory)
from ergolab.models import (DriftSpec, build_heisenberg, build_ou_identity,
                            exact_ou_transition)

ZERO3 = DriftSpec(kind="zero")


def test_em_step_examples():
    m = build_heisenberg(ZERO3)
    dt = 0.01
    out = em_step(m, [0.0, 0.0, 0.0], dt, [1.0, 0.0])
    np.testing.assert_allclose(out, [np.sqrt(2 * dt), 0, 0], rtol=1e-15)
    out = em_step(m, [0.0, 1.0, 0.0], dt, [1.0, 0.0])
    np.testing.assert_allclose(out, [np.sqrt(2 * dt), 1.0, 2 * np.sqrt(2 * dt)],
                               rtol=1e-15)
    mou = build_ou_identity(1.0, 3)
    x = np.array([0.3, -0.7, 2.0])
    out = em_step(mou, x, dt, np.zeros(3))
    np.testing.assert_allclose(out, x * (1 - dt), rtol=1e-15)


def _custom_model(fn, dim=1):
    from ergolab.models import DiffusionModel
    return DiffusionModel(name="custom", kind="ou_identity", dim=dim,
                          noise_dim=dim,
                          drift_spec=DriftSpec(kind="custom", fn=fn))


def test_em_step_blowup_signal():
    m = _custom_model(lambda X: np.full_like(X, 1e12), dim=3)
    with pytest.raises(BlowupError):
        em_step(m, [0.0, 0.0, 0.0], 1.0, np.zeros(3))


def test_simulate_path_deterministic(heis_ou):
    cfg = SimConfig(dt=1e-3, steps=5000, x0=(1.0, 0.0, 0.0), seed=7,
                    record_stride=50)
    t1 = simulate_path(heis_ou, cfg, stream=3)
    t2 = simulate_path(heis_ou, cfg, stream=3)
    assert (t1.states == t2.states).all()
    t3 = simulate_path(heis_ou, cfg, stream=4)
    assert not (t1.states == t3.states).all()
    assert t1.states.shape == (101, 3)
    np.testing.assert_array_equal(t1.states[0], [1.0, 0.0, 0.0])
    assert np.isfinite(t1.states).all()


def test_worker_count_invariance(ou3):
    cfg = SimConfig(dt=1e-3, steps=1000, x0=(0.5, 0.5, 0.5), seed=9,
                    record_stride=100)
    ref = simulate_ensemble(ou3, cfg, 37, workers=1, record=True)
    for workers in (2, 3, 8):
        ens = simulate_ensemble(ou3, cfg, 37, workers=workers, record=True)
        assert (ens.states == ref.states).all()
        assert (ens.endpoints == ref.endpoints).all()


def test_ensemble_mean_matches_analytic(ou3):
    cfg = SimConfig(dt=1e-3, steps=1000, x0=(1.0, 0.0, 0.0), seed=11)
    ens = simulate_ensemble(ou3, cfg, 4000, record=False)
    mean = ens.endpoints[:, 0].mean()
    se = ens.endpoints[:, 0].std(ddof=1) / np.sqrt(ens.M)
    assert abs(mean - np.exp(-1.0)) <= 3 * se + 2e-3   # 2e-3 for the dt bias


@pytest.mark.slow
def test_endpoint_variance_calibration(ou3):
    # T = 10, dt = 1e-3: endpoint variance within 1 +- 0.05 over 1e4 streams
    cfg = SimConfig(dt=1e-3, steps=10_000, x0=(0.0, 0.0, 0.0), seed=13)
    ens = simulate_ensemble(ou3, cfg, 10_000, record=False)
    var = ens.endpoints.var(axis=0, ddof=1)
    assert np.all(np.abs(var - 1.0) < 0.05)


def test_heisenberg_driftless_first_two_coords_brownian():
    # with b = 0 the first two coordinates are a Brownian motion scaled by
    # sqrt(2): increments are iid N(0, 2 dt)
    m = build_heisenberg(ZERO3)
    cfg = SimConfig(dt=1e-2, steps=4000, x0=(0.0, 0.0, 0.0), seed=17,
                    record_stride=1)
    traj = simulate_path(m, cfg)
    inc = np.diff(traj.states[:, :2], axis=0) / np.sqrt(2 * cfg.dt)
    for k in range(2):
        stat = kstest(inc[:, k], "norm").statistic
        assert stat < 0.03
    corr = np.corrcoef(inc[:, 0], inc[:, 1])[0, 1]
    assert abs(corr) < 0.05


def test_time_reversal_negation():
    # negating the noise sequence negates coordinates 1-2 exactly when b = 0
    m = build_heisenberg(ZERO3)
    rng_ = np.random.default_rng(5)
    xis = rng_.standard_normal((200, 2))
    xa = np.zeros(3)
    xb = np.zeros(3)
    for xi in xis:
        xa = em_step(m, xa, 0.01, xi)
        xb = em_step(m, xb, 0.01, -xi)
    np.testing.assert_array_equal(xa[:2], -xb[:2])


def test_no_blowup_ou_long_run(ou3):
    cfg = SimConfig(dt=0.1, steps=1000, x0=(5.0, 5.0, 5.0), seed=23)
    ens = simulate_ensemble(ou3, cfg, 200, record=False)
    assert ens.blowup_fraction == 0.0


def test_blowup_flagging_and_hard_error():
    m = _custom_model(lambda X: X**3)
    cfg = SimConfig(dt=0.5, steps=400, x0=(3.0,), seed=31, record_stride=10)
    with pytest.raises(EnsembleBlowupError):
        simulate_ensemble(m, cfg, 50, record=True)


def test_blowup_truncates_trajectory():
    m = _custom_model(lambda X: X**3)
    cfg = SimConfig(dt=0.5, steps=400, x0=(3.0,), seed=31, record_stride=10)
    traj = simulate_path(m, cfg)
    assert traj.blown
    assert traj.valid_states.shape[0] <= traj.states.shape[0]
    assert np.isfinite(traj.valid_states).all()


def test_ergt_roundtrip(tmp_path, heis_ou):
    cfg = SimConfig(dt=1e-3, steps=1000, x0=(1.0, 2.0, 3.0), seed=41,
                    record_stride=10)
    traj = simulate_path(heis_ou, cfg, stream=5)
    path = tmp_path / "traj.ergt"
    write_trajectory(str(path), traj)
    back = read_trajectory(str(path))
    assert (back.states == traj.states).all()
    assert back.dt == pytest.approx(cfg.dt * cfg.record_stride)
    assert back.seed == 41 and back.stream == 5
    raw = path.read_bytes()
    assert raw[:4] == b"ERGT"
    with pytest.raises(ValueError):
        path2 = tmp_path / "bad.ergt"
        path2.write_bytes(b"NOPE" + raw[4:])
        read_trajectory(str(path2))


def test_weak_error_probe_order_one():
    probe = weak_error_probe(gamma=1.0, t=1.0, dt_pair=(0.02, 0.01),
                             M=100_000, seed=3)
    assert probe.conclusive
    assert 1.6 <= probe.ratio <= 2.4
    # errors shrink with dt
    assert probe.errors[1] < probe.errors[0]


def test_weak_error_exact_chain_self_test():
    # the exact chain is unbiased: its mean matches e^(-gamma t) x0 within SE
    em, ex = coupled_ou_endpoints(1.0, np.array([1.0, 0.0, 0.0]), 1.0, 0.02,
                                  50_000, seed=12)
    target = np.exp(-1.0)
    se = ex[:, 0].std(ddof=1) / np.sqrt(len(ex))
    assert abs(ex[:, 0].mean() - target) <= 3 * se
    # the raw EM mean error hides in this noise; the coupled difference
    # resolves it, which is what makes the probe conclusive
    diff = em[:, 0] - ex[:, 0]
    se_diff = diff.std(ddof=1) / np.sqrt(len(diff))
    assert abs(diff.mean()) > 3 * se_diff
    assert se_diff < se / 10


def test_exact_chain_one_step_distribution():
    gamma, dt = 0.7, 0.05
    em, ex = coupled_ou_endpoints(gamma, np.array([2.0]), dt, dt, 50_000,
                                  seed=9)
    np.testing.assert_allclose(ex.mean(), 2.0 * np.exp(-gamma * dt), rtol=2e-3)
    np.testing.assert_allclose(ex.std(ddof=1),
                               np.sqrt(-np.expm1(-2 * gamma * dt) / gamma),
                               rtol=2e-2)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0, steps=10, x0=(0.0,), seed=1)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, steps=-1, x0=(0.0,), seed=1)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, steps=10, x0=(0.0,), seed=1, record_stride=0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, steps=10, x0=(0.0,), seed=1, scheme="milstein")
    cfg = SimConfig(dt=0.5, steps=10, x0=(0.0,), seed=1, record_stride=3)
    assert cfg.horizon == 5.0
    assert cfg.n_recorded == 4

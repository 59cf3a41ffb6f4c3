"""Ergodic estimators: exactness on constants, linearity, pathwise bounds,
calibration against the analytic OU constant, constancy diagnostics."""

import numpy as np
import pytest

from ergolab.ergodic import (CauchyConfig, DiscountedConfig, TimeAverageConfig,
                             constancy_diagnostic, cross_estimator_report,
                             default_observable, discounted_weight_total,
                             encode_observable, horizon_steps,
                             lambda_discounted, lambda_time_average,
                             observable_sup, u_cauchy, u_delta)
from ergolab.fields import EnvelopedField, PolyField, constant_field
from ergolab.models import DriftSpec, build_heisenberg, build_ou_identity

GAUSS3 = default_observable(3, 1.0)
LAMBDA_OU = 2.0 ** -1.5       # int exp(-|x|^2/2) dN(0, I_3)

# delta * u_delta(0) for OU-identity gamma=1, f = exp(-|x|^2/2): quadrature
# of delta e^(-delta t) (2 - e^(-2t))^(-3/2) (frozen from scipy.integrate)
DELTA_U_EXACT = {0.4: 0.423573, 0.2: 0.391078, 0.1: 0.373024, 0.05: 0.363478}


def test_encode_and_sup():
    assert encode_observable(GAUSS3)[0] == 1
    assert observable_sup(GAUSS3) == 1.0
    c = constant_field(3, -2.5)
    kind, cval, _, _ = encode_observable(c)
    assert kind == 0 and cval == -2.5
    assert observable_sup(c) == 2.5
    poly = PolyField(3, {(2, 0, 0): 1.0})
    assert encode_observable(poly) is None


def test_horizon_steps_tail_bound():
    for delta in (0.4, 0.05):
        ks = horizon_steps(delta, 0.01, 1e-3)
        T = ks * 1e-3
        assert np.exp(-delta * T) / delta <= 0.01 * (1 + 1e-6)
        assert np.exp(-delta * (T - 2e-3)) / delta > 0.01


def test_u_delta_constant_observable(ou3):
    c = constant_field(3, 2.0)
    res = u_delta(ou3, c, np.zeros(3), 0.25, M=64, dt=1e-2, seed=1,
                  eps_tail=0.01)
    assert res.se <= 1e-13 * abs(res.value)   # deterministic integrand
    assert abs(res.value - 2.0 / 0.25) <= 2.0 * 0.01 + 1e-9
    assert res.pathwise_ok


def test_u_delta_matches_quadrature(ou3):
    res = u_delta(ou3, GAUSS3, np.zeros(3), 0.2, M=4000, dt=1e-3, seed=2)
    lam = 0.2 * res.value
    assert abs(lam - DELTA_U_EXACT[0.2]) <= 3 * 0.2 * res.se + 0.004


def test_u_delta_pathwise_bound_sharp(ou3):
    # the trapezoid mass is the sharp discrete bound: sup |integral| per path
    res = u_delta(ou3, GAUSS3, np.zeros(3), 0.3, M=500, dt=1e-2, seed=3)
    assert res.pathwise_ok
    assert res.pathwise_bound <= 1.0 / 0.3 * (1 + (0.3 * 1e-2) ** 2)
    with pytest.raises(ValueError):
        u_delta(ou3, GAUSS3, np.zeros(3), 0.0, M=10, dt=1e-2)


def test_lambda_discounted_constant_rows(ou3):
    c = constant_field(3, 0.7)
    tbl = lambda_discounted(ou3, c, [np.zeros(3), np.ones(3)],
                            [0.4, 0.2, 0.1], M=16, dt=1e-2, seed=4,
                            eps_tail=0.01)
    # every entry equals 0.7 up to the truncation tail delta * eps_tail
    for ix in range(2):
        for j, d in enumerate(tbl.deltas):
            assert abs(tbl.values[ix, j] - 0.7) <= 0.7 * d * 0.01 + 1e-9
            assert tbl.ses[ix, j] <= 1e-13
    assert not tbl.inconclusive
    rep = constancy_diagnostic(tbl)
    assert all(row.spread <= 1e-9 for row in rep.rows)


def test_lambda_discounted_calibration(ou3):
    tbl = lambda_discounted(ou3, GAUSS3, [np.zeros(3)],
                            [0.4, 0.2, 0.1, 0.05], M=4000, dt=2e-3, seed=5)
    for j, d in enumerate(tbl.deltas):
        assert tbl.values[0, j] == pytest.approx(DELTA_U_EXACT[d], abs=0.01)
    assert tbl.extrapolated[0] == pytest.approx(
        LAMBDA_OU, abs=3 * tbl.extrapolated_se[0] + 0.01)
    assert tbl.pathwise_ok and not tbl.inconclusive


def test_scale_equivariance(ou3):
    # scaling f scales every estimator exactly (shared streams and horizons);
    # an affine shift adds b exactly through the constant observable's runs
    a, b = -1.7, 0.4
    f = GAUSS3
    af = EnvelopedField(PolyField(3, {(0, 0, 0): a}), 1.0)
    lam_f = lambda_discounted(ou3, f, [np.zeros(3)], [0.2, 0.1], M=256,
                              dt=1e-2, seed=6)
    lam_af = lambda_discounted(ou3, af, [np.zeros(3)], [0.2, 0.1], M=256,
                               dt=1e-2, seed=6)
    np.testing.assert_allclose(lam_af.values, a * lam_f.values, rtol=1e-12)
    one = constant_field(3, 1.0)
    lam_1 = lambda_discounted(ou3, one, [np.zeros(3)], [0.2, 0.1], M=256,
                              dt=1e-2, seed=6)
    affine = a * lam_f.values + b * lam_1.values
    assert np.allclose(lam_1.values, 1.0, atol=0.01)
    assert np.allclose(affine, a * lam_f.values + b * lam_1.values, atol=0)
    # u_cauchy and time-average linearity are exact too
    va, _ = u_cauchy(ou3, f, np.zeros(3), 2.0, M=512, dt=1e-2, seed=7)
    vb, _ = u_cauchy(ou3, af, np.zeros(3), 2.0, M=512, dt=1e-2, seed=7)
    assert vb == pytest.approx(a * va, rel=1e-12)
    ta_f = lambda_time_average(ou3, f, np.zeros(3), T=20.0, burn=2.0,
                               dt=1e-2, seed=8)
    ta_af = lambda_time_average(ou3, af, np.zeros(3), T=20.0, burn=2.0,
                                dt=1e-2, seed=8)
    assert ta_af.value == pytest.approx(a * ta_f.value, rel=1e-12)


def test_u_cauchy_examples(ou3):
    # t = 0 returns f(x0) exactly
    x0 = np.array([0.3, -0.5, 1.0])
    v, se = u_cauchy(ou3, GAUSS3, x0, 0.0, M=100, dt=1e-2)
    assert v == GAUSS3.value_many(x0[None, :])[0]
    assert se == 0.0
    # long horizon: stationary expectation
    v, se = u_cauchy(ou3, GAUSS3, np.zeros(3), 10.0, M=4000, dt=1e-3, seed=8)
    assert abs(v - LAMBDA_OU) <= 3 * se + 0.005
    # |u| <= sup|f| pathwise
    assert v <= observable_sup(GAUSS3)


def test_lambda_time_average(ou3):
    ta = lambda_time_average(ou3, GAUSS3, np.zeros(3), T=400.0, burn=10.0,
                             dt=1e-3, seed=9)
    assert abs(ta.value - LAMBDA_OU) <= 3 * ta.se + 0.01
    # identical, bit for bit, to integrating f against the occupation measure
    assert ta.value == ta.measure.expect(GAUSS3)
    c = constant_field(3, 3.3)
    ta_c = lambda_time_average(ou3, c, np.zeros(3), T=50.0, burn=5.0,
                               dt=1e-2, seed=10)
    assert ta_c.value == pytest.approx(3.3, rel=1e-15)
    with pytest.raises(ValueError):
        lambda_time_average(ou3, GAUSS3, np.zeros(3), T=5.0, burn=5.0, dt=1e-2)


def test_constancy_single_point_and_decrease(ou3):
    tbl = lambda_discounted(ou3, GAUSS3, [np.zeros(3)], [0.4, 0.1], M=128,
                            dt=1e-2, seed=11)
    rep = constancy_diagnostic(tbl)
    assert all(row.spread == 0.0 for row in rep.rows)
    assert rep.final_passed

    x0s = [np.zeros(3), np.array([2.0, 0, 0]), np.array([0, 0, 2.0])]
    tbl = lambda_discounted(ou3, GAUSS3, x0s, [0.8, 0.4, 0.2, 0.1], M=1000,
                            dt=5e-3, seed=12)
    rep = constancy_diagnostic(tbl)
    assert rep.decreasing
    assert rep.rows[-1].spread < rep.rows[0].spread


def test_cross_estimator_report_ou_small(ou3):
    dcfg = DiscountedConfig(deltas=(0.4, 0.2, 0.1, 0.05),
                            x0_set=((0.0, 0.0, 0.0),), M=2000, dt=2e-3)
    ccfg = CauchyConfig(times=(2.0, 5.0, 10.0), x0_set=((0.0, 0.0, 0.0),),
                        M=2000, dt=2e-3)
    tcfg = TimeAverageConfig(T=400.0, burn=10.0, dt=2e-3)
    rep = cross_estimator_report(ou3, GAUSS3, dcfg, ccfg, tcfg, seed=13)
    assert rep.verdict == "pass"
    assert rep.sup_f_bound_ok
    for name in ("lambda_invariant", "lambda_discounted_extrapolated",
                 "u_cauchy_final", "lambda_time_average"):
        v, se = rep.headline[name]
        assert abs(v - LAMBDA_OU) <= 3 * se + 0.012, (name, v, se)
    # v/t approaches lambda at the slow O(1/t) rate
    err = np.abs(rep.v_over_t[0] - LAMBDA_OU)
    assert err[-1] <= 0.35 / rep.cauchy_times[-1] + 3 * rep.v_over_t_ses[0, -1]
    assert err[-1] < err[0]
    d = rep.to_dict()
    assert d["verdict"] == "pass"


def test_cross_estimator_constant_observable(ou3):
    c = constant_field(3, 1.25)
    dcfg = DiscountedConfig(deltas=(0.4, 0.2), x0_set=((0.0, 0.0, 0.0),),
                            M=32, dt=1e-2)
    ccfg = CauchyConfig(times=(1.0, 2.0), x0_set=((0.0, 0.0, 0.0),), M=32,
                        dt=1e-2)
    tcfg = TimeAverageConfig(T=20.0, burn=2.0, dt=1e-2)
    rep = cross_estimator_report(ou3, c, dcfg, ccfg, tcfg, seed=14)
    assert rep.verdict == "pass"
    for name, (v, se) in rep.headline.items():
        assert v == pytest.approx(1.25, rel=2e-3), name
        assert se <= 1e-12

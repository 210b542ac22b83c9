import math

import numpy as np
import pytest

from smallimpact.coeffs import closed_form_limit
from smallimpact.limit import build_limit_state, decompose_limit_strategy
from smallimpact.model import ModelParams, constant_factor
from smallimpact.pathsim import SampledPath, TimeGrid, simulate_brownian, simulate_paths
from smallimpact.strategies import (RateStrategy, SemimartingaleStrategy, impact, impact_euler, inventory,
                                    jump_smoothing_statistic, l2_distance, mollify, net_jumps, rate_from_function,
                                    tracker)

G = TimeGrid.uniform(1.0, 1000)


def test_immediate_liquidation():
    X = inventory(SemimartingaleStrategy(1.0, [], [(0.0, 1.0)]), G)
    assert X.values[0] == 1.0  # pre-trade position
    assert np.all(X.values[1:] == 0.0)


def test_linear_liquidation():
    V = SampledPath(G.t, -G.t)
    X = inventory(SemimartingaleStrategy(1.0, [], [], V), G)
    np.testing.assert_allclose(X.values, 1 - G.t, atol=1e-15)


def test_ow_reconstruction():
    p = ModelParams(gamma=1.0, T=1.0, x0=1.0, rho_bounds=(1.0, 1.0))
    b = simulate_paths(constant_factor(1.0, 0.0), p, TimeGrid.refined(1.0), [0])[0]
    st = build_limit_state(closed_form_limit(b.rho, 0.0, p), b, p)
    s = decompose_limit_strategy(st)
    X = inventory(SemimartingaleStrategy(s.x0, [], s.j_minus, s.V_hat), b.W.grid)
    np.testing.assert_allclose(X.values[1:], st.Xhat0.values, atol=1e-12)


def test_jump_off_grid_rejected():
    with pytest.raises(ValueError):
        inventory(SemimartingaleStrategy(1.0, [], [(0.00051, 1.0)]), G)


def test_negative_jump_rejected():
    with pytest.raises(ValueError):
        SemimartingaleStrategy(1.0, [(0.5, -1.0)])


def test_net_jumps():
    assert net_jumps([(0.5, 1.0)], [(0.5, 0.25), (1.0, 2.0)]) == [(0.5, 0.75), (1.0, -2.0)]


def test_impact_examples():
    rho1 = SampledPath(G.t, np.ones_like(G.t))
    Y = impact(SampledPath(G.t, np.ones_like(G.t)), rho1, 2.0)
    assert np.max(np.abs(Y.values)) == 0.0
    X = SampledPath(G.t, 1 + np.sin(3 * G.t))
    Y0 = impact(X, SampledPath(G.t, np.zeros_like(G.t)), 2.0)
    np.testing.assert_allclose(Y0.values, 2.0 * (X.values - 1.0), atol=1e-14)
    Yl = impact(SampledPath(G.t, 1 - G.t), rho1, 1.0)
    np.testing.assert_allclose(Yl.values, np.exp(-G.t) - 1, atol=1e-12)
    assert Yl.values[-1] == pytest.approx(-0.632121, abs=1e-6)


def test_impact_block_and_euler_reference():
    X = inventory(SemimartingaleStrategy(1.0, [], [(0.0, 1.0)]), G)
    rho = SampledPath(G.t, np.ones_like(G.t))
    Y = impact(X, rho, 1.0)
    np.testing.assert_allclose(Y.values[1:], -np.exp(-X.t[1:]), atol=1e-12)
    Ye = impact_euler(X, rho, 1.0)
    assert np.max(np.abs(Ye.values - Y.values)) < 2e-3


def test_tracker_zero_input():
    tr = tracker(SampledPath(G.t, np.zeros_like(G.t)), 0.1, 0.01)
    assert np.all(tr.rate.values == 0) and np.all(tr.V_tilde.values == 0)


def test_tracker_linear_regime():
    nu = 0.01
    g = TimeGrid.uniform(1.0, 20000)
    V = SampledPath(g.t, g.t)
    tr = tracker(V, 1.0, nu)  # beta large: linear feedback dx/dt = (V - x)/nu
    lag = V.values - tr.V_tilde.values
    # holding V at the left node adds a relative lag of order h / nu
    assert lag[-1] == pytest.approx(nu, rel=5e-3)
    assert tr.rate.values[-2] == pytest.approx(1.0, rel=1e-3)
    assert np.all(np.diff(lag) >= -1e-15)


def test_tracker_brownian_bound():
    beta = 0.05
    ok = 0
    for s in range(200):
        W = simulate_brownian(TimeGrid.uniform(1.0, 4096), s)
        ok += tracker(W, beta, beta ** 2 / 10).error(W) <= 3 * beta
    assert ok / 200 >= 0.95


def test_mollify_single_block():
    theta = SemimartingaleStrategy(1.0, [], [(0.0, 1.0)])
    r = mollify(theta, 0.1, 0.01, 0.1, G)
    t = r.t
    rate = r.xi.values[:-1]
    a = t[:-1]
    np.testing.assert_allclose(rate[a < 0.1 - 1e-12], -10.0)
    assert np.all(rate[(a >= 0.1 - 1e-12)] == 0.0)
    assert r.inventory().values[-1] == pytest.approx(0.0, abs=1e-12)


def test_mollify_smooth_rate_of_convergence():
    V = SampledPath(G.t, -G.t + 0.1 * np.sin(2 * math.pi * G.t))
    theta = SemimartingaleStrategy(1.0, [], [], V)
    errs = []
    for k in (0.1, 0.05, 0.025):
        r = mollify(theta, k, k / 10, k, G)
        X = inventory(theta, r.xi.grid)
        keep = np.concatenate([X.t[1:] != X.t[:-1], [True]])
        errs.append(math.sqrt(l2_distance(SampledPath(r.t, X.values[keep]), r.inventory(), r.xi.grid)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] > 1.5  # roughly first order in (beta + eps)


def test_rate_from_function_is_exact_for_polynomials():
    r = rate_from_function(lambda s: 3 * s ** 2, TimeGrid.uniform(1.0, 7), 1.0)
    assert r.inventory().values[-1] == pytest.approx(2.0, abs=1e-14)


def test_rate_strategy_continuous_part():
    r = RateStrategy(1.0, SampledPath(G.t, -np.ones_like(G.t)))
    th = r.continuous_part()
    assert th.liquidating
    assert r.square_integral() == pytest.approx(1.0)


def test_jump_smoothing():
    stairs = [(k / 10, 0.1) for k in range(10)]
    assert jump_smoothing_statistic(stairs, 0.05, 1.0) == pytest.approx(10 * 0.01 * 0.05)
    assert jump_smoothing_statistic([(0.5, 1.0)], 0.2, 1.0) == pytest.approx(0.2)
    assert jump_smoothing_statistic([(0.95, 1.0)], 0.2, 1.0) == pytest.approx(0.05)

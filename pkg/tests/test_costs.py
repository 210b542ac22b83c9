import math

import numpy as np
import pytest

from smallimpact.coeffs import closed_form_limit, solve_B0_deterministic
from smallimpact.costs import (cost_estimate_bound, cost_eta, cost_semimartingale, first_order_check,
                               first_order_formula, limit_semimartingale, paired_difference, perturbation_battery,
                               realized_qv, transient_direct, transient_identity)
from smallimpact.limit import LimitStrategy, build_limit_state, decompose_limit_strategy
from smallimpact.model import ModelParams, constant_factor, sine_factor
from smallimpact.pathsim import SampledPath, TimeGrid, simulate_paths
from smallimpact.strategies import RateStrategy, SemimartingaleStrategy, rate_from_function

UNIT = ModelParams(gamma=1.0, T=1.0, x0=1.0, rho_bounds=(1.0, 1.0), lambda_bounds=(0.0, 1.0))
DET = ModelParams(gamma=3.0, T=1.0, x0=1.0, rho_bounds=(1.0, 1.0), lambda_bounds=(0.0, 1.0))


@pytest.fixture(scope="module")
def unit_bundle():
    return simulate_paths(constant_factor(1.0, 1.0), UNIT, TimeGrid.refined(1.0), [0])


def test_no_trading_penalty_and_risk(unit_bundle):
    t = unit_bundle[0].t
    xi = RateStrategy(1.0, SampledPath(t, np.zeros_like(t)))
    c = cost_eta(xi, unit_bundle, UNIT.replace(eta=0.1, N=5.0))
    assert c.total == pytest.approx(3.0, abs=1e-12)
    assert c.penalty == 2.5 and c.risk == pytest.approx(0.5, abs=1e-12)


def test_linear_liquidation(unit_bundle):
    t = unit_bundle[0].t
    xi = RateStrategy(1.0, SampledPath(t, -np.ones_like(t)))
    c = cost_eta(xi, unit_bundle, UNIT.replace(eta=0.1))
    assert c.instantaneous == pytest.approx(0.05, abs=1e-12)
    assert c.risk == pytest.approx(1 / 6, abs=1e-7)
    assert c.transient == pytest.approx(math.exp(-1.0), abs=1e-7)  # int (e^-t - 1)(-1) dt = e^-1
    assert c.total == pytest.approx(0.05 + math.exp(-1.0) + 1 / 6, abs=1e-7)


def test_strict_liquidation_enforced(unit_bundle):
    t = unit_bundle[0].t
    xi = RateStrategy(1.0, SampledPath(t, -0.5 * np.ones_like(t)))
    with pytest.raises(ValueError):
        cost_eta(xi, unit_bundle, UNIT.replace(eta=0.1))


def test_immediate_block(unit_bundle):
    c = cost_semimartingale(SemimartingaleStrategy(1.0, [], [(0.0, 1.0)]), unit_bundle, UNIT)
    assert c.block0 == 0.5
    # Y = -exp(-t): Y_T^2/2 - 1/2 + int Y^2 = e^-2/2 - 1/2 + (1 - e^-2)/2 = 0
    assert c.transient == pytest.approx(0.0, abs=1e-7)
    assert c.total == pytest.approx(0.5, abs=1e-7)


def test_identity_matches_direct_sum(unit_bundle):
    b = unit_bundle[0]
    t = b.t
    V = SampledPath(t, -0.5 * t)
    th = SemimartingaleStrategy(1.0, [], [(0.0, 0.25), (1.0, 0.25)], V)
    assert transient_direct(th, b, UNIT) == pytest.approx(transient_identity(th, b, UNIT), abs=1e-3)


def test_eta_identity_for_smooth_rate(unit_bundle):
    xi = rate_from_function(lambda s: -1.0 + 0.3 * np.cos(math.pi * s), unit_bundle[0].W.grid, 1.0)
    p = UNIT.replace(eta=0.05)
    Je = cost_eta(xi, unit_bundle, p).total
    J0 = cost_semimartingale(xi.continuous_part(), unit_bundle, UNIT).total
    assert abs(Je - J0 - p.eta / 2 * xi.square_integral()) <= 10 * TimeGrid.refined(1.0).dt_max


def test_smooth_qv_vanishes():
    qv = [realized_qv(SampledPath(np.linspace(0, 1, n + 1), np.sin(np.linspace(0, 1, n + 1)))) for n in (100, 1000)]
    assert qv[1] < qv[0] / 5


def test_first_order_deterministic():
    b = simulate_paths(constant_factor(1.0, 1.0), DET, TimeGrid.refined(1.0), [0])
    lim = solve_B0_deterministic(b[0].rho, b[0].lam, DET)
    st = build_limit_state(lim, b[0], DET)
    s = decompose_limit_strategy(st)
    J0 = cost_semimartingale(limit_semimartingale(s), b, DET).total
    d = first_order_check([s], b, DET)
    assert abs(d) <= 1e-3 * J0
    assert abs(first_order_formula([st], b, DET)) <= 1e-3 * J0
    for q in (0.2, -0.2):
        assert cost_semimartingale(limit_semimartingale(s, q), b, DET).total > J0


def test_first_order_ow():
    p = ModelParams(gamma=1.0, T=1.0, x0=1.0, rho_bounds=(1.0, 1.0))
    b = simulate_paths(constant_factor(1.0, 0.0), p, TimeGrid.refined(1.0), [0])
    st = build_limit_state(closed_form_limit(b[0].rho, 0.0, p), b[0], p)
    s = decompose_limit_strategy(st)
    J0 = cost_semimartingale(limit_semimartingale(s), b, p).total
    assert abs(first_order_check([s], b, p)) <= 1e-3 * J0


def test_round_trip_from_zero_costs():
    p = ModelParams(gamma=1.0, T=1.0, x0=1.0, rho_bounds=(1.0, 1.0))
    b = simulate_paths(constant_factor(1.0, 0.0), p, TimeGrid.refined(1.0), [0])
    t = b[0].t
    s = LimitStrategy(0.0, [(0.0, 0.0), (1.0, 0.0)], SampledPath(t, np.zeros_like(t)))
    assert first_order_check([s], b, p, scheme="forward") > 0


def test_battery_is_admissible_and_costlier():
    b = simulate_paths(constant_factor(1.0, 1.0), DET, TimeGrid.refined(1.0), [0])
    lim = solve_B0_deterministic(b[0].rho, b[0].lam, DET)
    st = build_limit_state(lim, b[0], DET)
    s = decompose_limit_strategy(st)
    J0 = cost_semimartingale(limit_semimartingale(s), b, DET).total
    bat = perturbation_battery(s, st, b[0])
    assert len(bat) == 20
    for name, th in bat.items():
        assert abs(th.terminal_position()) < 1e-12, name
        assert cost_semimartingale(th, b, DET).total > J0, name


def test_paired_difference_on_common_paths():
    f = sine_factor()
    p = ModelParams(gamma=3.0, T=1.0, x0=1.0, rho_bounds=(0.1, 1.9), lambda_bounds=(0.0, 1.0))
    b = simulate_paths(f, p, TimeGrid.uniform(1.0, 512), range(30))
    a = cost_semimartingale(SemimartingaleStrategy(1.0, [], [(0.0, 1.0)]), b, p)
    t = b[0].t
    c = cost_semimartingale(SemimartingaleStrategy(1.0, [], [], SampledPath(t, -t)), b, p)
    d, se = paired_difference(a, c)
    assert d == pytest.approx(a.total - c.total)
    assert se < max(a.stderr, c.stderr) * 10


def test_cost_estimate_bound_scaling():
    assert cost_estimate_bound(0.0, 1.0, DET) == 0.0
    assert cost_estimate_bound(1e-4, 1.0, DET) < cost_estimate_bound(1e-2, 1.0, DET)

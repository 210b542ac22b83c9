"""Randomized property checks."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from smallimpact.coeffs import closed_form_B0, closed_form_limit, solve_B0_deterministic
from smallimpact.graphs import CompletedGraph, hausdorff
from smallimpact.limit import build_limit_state, decompose_limit_strategy
from smallimpact.model import ModelParams, lambda_prop_rho_factor, lower_penalty
from smallimpact.pathsim import SampledPath, TimeGrid, simulate_paths
from smallimpact.strategies import impact, tracker

pos = st.floats(0.05, 5.0)


@given(C=st.floats(0.0, 5.0), gamma=pos, R=st.floats(0.0, 10.0))
def test_closed_form_B0_in_unit_interval(C, gamma, R):
    b = closed_form_B0(C, gamma, R)
    assert 0 < b <= 1 + 1e-12


@given(C=st.floats(0.0, 3.0), gamma=pos, rho=st.floats(0.1, 3.0))
@settings(max_examples=25, deadline=None)
def test_limit_state_identities(C, gamma, rho):
    p = ModelParams(gamma=gamma, T=1.0, x0=1.0, rho_bounds=(rho, rho), lambda_bounds=(0.0, C * rho))
    b = simulate_paths(lambda_prop_rho_factor(C, rho), p, TimeGrid.uniform(1.0, 256), [0])[0]
    lim = solve_B0_deterministic(b.rho, b.lam, p)
    np.testing.assert_allclose(lim.D0.values + gamma * lim.E0.values, b.phi.values, atol=1e-10)
    st_ = build_limit_state(lim, b, p)
    X = st_.Xhat0.values[:-1]
    assert np.all((X > 0) & (X < 1))
    assert st_.initial_block > 0 and st_.terminal_block > 0
    decompose_limit_strategy(st_)


@given(eta=st.floats(0.0, 1.0), lam=st.floats(0.0, 3.0), rho=st.floats(0.1, 3.0), gamma=pos)
def test_penalty_floor_at_least_gamma_plus_one(eta, lam, rho, gamma):
    assert lower_penalty(gamma, eta, lam, rho) >= gamma + 1


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=30), st.floats(0.1, 5.0))
def test_impact_linear_in_trades(xs, gamma):
    t = np.linspace(0, 1, len(xs))
    rho = SampledPath(t, np.ones_like(t))
    x = np.asarray(xs)
    a = impact(SampledPath(t, x), rho, gamma).values
    b = impact(SampledPath(t, 2 * x), rho, gamma).values
    np.testing.assert_allclose(b, 2 * a, atol=1e-12)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=40), st.floats(0.01, 0.5), st.floats(1e-4, 0.1))
def test_tracker_rate_is_saturated(xs, beta, nu):
    t = np.linspace(0, 1, len(xs))
    v = np.asarray(xs)
    v[0] = 0.0
    tr = tracker(SampledPath(t, v), beta, nu)
    assert np.all(np.abs(tr.rate.values) <= beta / nu * (1 + 1e-12))
    assert np.max(np.abs(tr.V_tilde.values)) <= np.max(np.abs(v)) + 1e-12


@given(st.lists(st.floats(-2, 2), min_size=2, max_size=20), st.lists(st.floats(-2, 2), min_size=2, max_size=20),
       st.floats(-1, 1))
@settings(max_examples=50)
def test_hausdorff_symmetric_and_shift(xa, xb, c):
    a = CompletedGraph(np.linspace(0, 1, len(xa)), np.asarray(xa))
    b = CompletedGraph(np.linspace(0, 1, len(xb)), np.asarray(xb))
    r = 1e-3
    assert hausdorff(a, b, r) == hausdorff(b, a, r)
    shifted = CompletedGraph(a.t, a.x + c)
    assert hausdorff(a, shifted, r) <= abs(c) + 1e-12

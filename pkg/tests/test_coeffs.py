import math

import numpy as np
import pytest

from smallimpact.coeffs import (CoefficientField, SolverFault, cache_key, closed_form_B0, closed_form_limit,
                                load_limit, load_prelimit, prelimit_envelope_violation, save_limit, save_prelimit,
                                solve_B0_deterministic, solve_B0_pde, solve_prelimit_deterministic,
                                solve_prelimit_pde)
from smallimpact.model import ModelParams, constant_factor, lambda_prop_rho_factor, sine_factor
from smallimpact.pathsim import TimeGrid, chi_hull, simulate_paths

DET = ModelParams(gamma=3.0, T=1.0, x0=1.0, rho_bounds=(1.0, 1.0), lambda_bounds=(0.0, 1.0))
SINE = ModelParams(gamma=3.0, T=1.0, x0=1.0, rho_bounds=(0.1, 1.9), lambda_bounds=(0.0, 1.0))


@pytest.fixture(scope="module")
def det_bundle():
    return simulate_paths(constant_factor(1.0, 1.0), DET, TimeGrid.refined(1.0), [0])[0]


def test_closed_form_values():
    assert closed_form_B0(0.0, 2.0, 1.0) == pytest.approx(2 / 3, abs=1e-15)
    assert closed_form_B0(1.7, 2.0, 0.0) == pytest.approx(1.0, abs=1e-14)
    assert closed_form_B0(1.0, 3.0, 1.0) == pytest.approx(0.73522, abs=5e-6)


def test_closed_form_near_zero_C_is_continuous():
    assert closed_form_B0(1e-8, 1.0, 1.0) == pytest.approx(2 / 3, abs=1e-6)


def test_deterministic_limit_values(det_bundle):
    b = det_bundle
    lim = solve_B0_deterministic(b.rho, b.lam, DET)
    assert lim.B0.values[0] == pytest.approx(0.735221, abs=1e-6)
    b0 = closed_form_B0(1.0, 3.0, 1.0)
    assert lim.D0.values[0] == pytest.approx((1.0 + 3.0 * b0) / math.sqrt(7.0), abs=1e-9)
    assert lim.D0.values[0] == pytest.approx(1.21164, abs=2e-5)
    assert lim.E0.values[0] == pytest.approx(0.47804, abs=1e-5)
    ph = np.sqrt(7.0)
    np.testing.assert_allclose(lim.D0.values + 3 * lim.E0.values, ph, atol=1e-10)


def test_ow_limit_B0():
    p = ModelParams(gamma=1.0, T=1.0, x0=1.0, rho_bounds=(1.0, 1.0))
    b = simulate_paths(constant_factor(1.0, 0.0), p, TimeGrid.uniform(1.0, 100), [0])[0]
    assert solve_B0_deterministic(b.rho, b.lam, p).B0.values[0] == pytest.approx(2 / 3, abs=1e-10)
    assert closed_form_limit(b.rho, 0.0, p).B0.values[0] == pytest.approx(2 / 3, abs=1e-15)


def test_pde_matches_ode_without_diffusion(det_bundle):
    f = constant_factor(1.0, 1.0)
    grid = TimeGrid.refined(1.0)
    chi = chi_hull(f, 1.0, n=5)
    pde = solve_B0_pde(f, DET, chi, grid)
    ode = solve_B0_deterministic(det_bundle.rho, det_bundle.lam, DET)
    assert np.max(np.abs(pde.B0.values[:, 2] - ode.B0.values)) <= 1e-6


@pytest.fixture(scope="module")
def sine_limit():
    f = sine_factor()
    return solve_B0_pde(f, SINE, chi_hull(f, 1.0), TimeGrid.refined(1.0))


def test_pde_B0_bounds(sine_limit):
    from smallimpact.model import DerivedBounds
    B = sine_limit.B0.values
    lo = DerivedBounds.from_params(SINE).B0_lower(sine_limit.B0.t)[:, None]
    assert np.all(B <= 1 + 1e-6)
    assert np.all(B >= lo - 1e-6)


def test_pde_self_convergence(sine_limit):
    f = sine_factor()
    fine = solve_B0_pde(f, SINE, chi_hull(f, 1.0, n=481), TimeGrid.refined(1.0, 8192))
    assert abs(fine.B0(0.0, 0.0) - sine_limit.B0(0.0, 0.0)) < 1e-4


def test_prelimit_terminal_values_finite_N(det_bundle):
    p = DET.replace(eta=1e-2, N=6.0)
    c = solve_prelimit_deterministic(det_bundle.rho, det_bundle.lam, p)
    assert c.B.values[-1] == 1.0
    assert c.E.values[-1] == 0.0
    assert c.D.values[-1] == pytest.approx((6.0 - 3.0) / 0.1, rel=1e-12)
    assert c.A.values[-1] == pytest.approx(6.0, rel=1e-12)
    assert c.C.values[-1] == pytest.approx(0.0, abs=1e-15)


def test_prelimit_close_to_limit(det_bundle):
    c = solve_prelimit_deterministic(det_bundle.rho, det_bundle.lam, DET.replace(eta=1e-4))
    assert abs(c.B.values[0] - 0.73522) <= 1e-2
    live = c.t < 1.0
    assert np.all(c.E.values[live] >= 0)
    assert np.all(c.D.values[live] > 0)


def test_prelimit_pde_matches_ode(det_bundle):
    f = constant_factor(1.0, 1.0)
    p = DET.replace(eta=1e-2)
    pde = solve_prelimit_pde(f, p, chi_hull(f, 1.0, n=5), TimeGrid.refined(1.0))
    ode = solve_prelimit_deterministic(det_bundle.rho, det_bundle.lam, p)
    for a, b in ((pde.B, ode.B), (pde.E, ode.E)):
        assert np.max(np.abs(a.values[:, 2] - b.values)) <= 1e-5


def test_sine_prelimit_envelopes_and_sweep(sine_limit):
    f = sine_factor()
    grid = TimeGrid.refined(1.0)
    chi = chi_hull(f, 1.0)
    sups = []
    for eta in (1e-1, 1e-2, 1e-3):
        p = SINE.replace(eta=eta)
        c = solve_prelimit_pde(f, p, chi, grid)
        assert max(prelimit_envelope_violation(c, p).values()) <= 1e-6
        m = c.t <= 0.95
        sups.append(np.max(np.abs(c.B.values[m] - sine_limit.B0(c.t[m][:, None], chi[None, :]))))
    assert sups[0] > sups[1] > sups[2]


def test_prelimit_rejects_low_penalty(det_bundle):
    with pytest.raises(ValueError, match="N_min"):
        solve_prelimit_deterministic(det_bundle.rho, det_bundle.lam, DET.replace(eta=1e-2, N=4.0))


def test_envelope_fault_is_raised(det_bundle):
    with pytest.raises(SolverFault):
        solve_prelimit_deterministic(det_bundle.rho, det_bundle.lam, DET.replace(eta=1e-2), bound_tol=-1.0)


def test_field_interpolation():
    t = np.array([0.0, 1.0])
    chi = np.array([-1.0, 1.0])
    f = CoefficientField(t, np.array([[0.0, 2.0], [4.0, 6.0]]), chi)
    assert f(0.5, 0.0) == pytest.approx(3.0)
    assert f(0.5, 5.0) == pytest.approx(4.0)  # clamped to the hull edge
    assert f.clamp_events >= 1
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_cache_roundtrip(tmp_path, det_bundle):
    p = DET.replace(eta=1e-2)
    c = solve_prelimit_deterministic(det_bundle.rho, det_bundle.lam, p)
    save_prelimit(tmp_path / "c.npz", c)
    c2 = load_prelimit(tmp_path / "c.npz")
    np.testing.assert_array_equal(c.B.values, c2.B.values)
    lim = solve_B0_deterministic(det_bundle.rho, det_bundle.lam, p)
    save_limit(tmp_path / "l.npz", lim)
    np.testing.assert_array_equal(load_limit(tmp_path / "l.npz").E0.values, lim.E0.values)
    k1 = cache_key(p, constant_factor(1.0, 1.0), c.t, None)
    assert k1 == cache_key(p, constant_factor(1.0, 1.0), c.t, None)
    assert k1 != cache_key(p.replace(eta=2e-2), constant_factor(1.0, 1.0), c.t, None)


def test_lambda_prop_rho_pde_matches_closed_form():
    p = ModelParams(gamma=2.0, T=1.0, x0=1.0, rho_bounds=(1.5, 1.5), lambda_bounds=(0.0, 3.0))
    f = lambda_prop_rho_factor(2.0, 1.5)
    lim = solve_B0_pde(f, p, chi_hull(f, 1.0, n=5), TimeGrid.refined(1.0))
    t = lim.B0.t
    np.testing.assert_allclose(lim.B0.values[:, 2], closed_form_B0(2.0, 2.0, 1.5 * (1 - t)), atol=1e-6)

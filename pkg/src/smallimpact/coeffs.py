"""Backward coefficient equations: pre-limit ``(B, D, E)`` and the limit ``B0``.

Deterministic coefficients are integrated as ODEs; a one-dimensional factor
is handled by the semilinear PDE on a space grid.  Pre-limit fields are
solved in the variables ``(B, U, E)`` with ``U = 1/D``: ``U`` stays smooth
up to the terminal time even when ``D`` blows up (strict liquidation).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels as K
from .model import DerivedBounds, FactorModel, ModelParams
from .pathsim import SampledPath, TimeGrid


class SolverFault(RuntimeError):
    """Numerical failure of a coefficient solve (signals a bug or bad numerics)."""


class CoefficientField:
    """A field on a time grid, optionally times a uniform space grid.

    Evaluation is bilinear; space arguments outside the grid hull are
    clamped and counted in ``clamp_events``.
    """

    def __init__(self, t, values, chi=None, name: str = ""):
        self.t = np.asarray(t, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.chi = None if chi is None else np.asarray(chi, dtype=float)
        self.name = name
        self.clamp_events = 0
        self.evaluations = 0
        if self.chi is None:
            if self.values.shape != self.t.shape:
                raise ValueError("deterministic field needs one value per time node")
        elif self.values.shape != (self.t.size, self.chi.size):
            raise ValueError("field values must be (n_t, n_chi)")
        self.values.setflags(write=False)

    @property
    def deterministic(self) -> bool:
        return self.chi is None

    def _time_weights(self, t):
        i = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, self.t.size - 2)
        w = (t - self.t[i]) / (self.t[i + 1] - self.t[i])
        return i, np.clip(w, 0.0, 1.0)

    def __call__(self, t, chi=None):
        t = np.asarray(t, dtype=float)
        i, w = self._time_weights(t)
        if self.chi is None:
            v = self.values
            with np.errstate(invalid="ignore"):
                out = v[i] * (1.0 - w) + v[i + 1] * w
            # keep infinities at exact nodes (terminal D for strict liquidation)
            return np.where(w == 0.0, v[i], np.where(w == 1.0, v[i + 1], out))
        t, chi = np.broadcast_arrays(t, np.asarray(chi, dtype=float))
        i, w = self._time_weights(t)
        lo, hi = self.chi[0], self.chi[-1]
        outside = (chi < lo) | (chi > hi)
        self.clamp_events += int(np.count_nonzero(outside))
        self.evaluations += int(chi.size)
        c = np.clip(chi, lo, hi)
        dx = self.chi[1] - self.chi[0]
        j = np.clip(((c - lo) / dx).astype(np.int64), 0, self.chi.size - 2)
        u = np.clip((c - self.chi[j]) / dx, 0.0, 1.0)
        v = self.values
        top = v[i, j] * (1.0 - u) + v[i, j + 1] * u
        bot = v[i + 1, j] * (1.0 - u) + v[i + 1, j + 1] * u
        out = top * (1.0 - w) + bot * w
        return np.where(w == 0.0, top, np.where(w == 1.0, bot, out))

    @property
    def clamp_fraction(self) -> float:
        return self.clamp_events / self.evaluations if self.evaluations else 0.0


@dataclass
class LimitCoefficients:
    B0: CoefficientField
    D0: CoefficientField
    E0: CoefficientField


@dataclass
class PreLimitCoefficients:
    B: CoefficientField
    U: CoefficientField
    E: CoefficientField
    eta: float
    N: float
    gamma: float
    t_start: float

    @property
    def D(self) -> CoefficientField:
        with np.errstate(divide="ignore"):
            vals = 1.0 / self.U.values
        return CoefficientField(self.U.t, vals, self.U.chi, "D")

    @property
    def A(self) -> CoefficientField:
        sq = math.sqrt(self.eta)
        with np.errstate(divide="ignore"):
            vals = sq / self.U.values + self.gamma * self.B.values
        return CoefficientField(self.U.t, vals, self.U.chi, "A")

    @property
    def C(self) -> CoefficientField:
        vals = (math.sqrt(self.eta) * self.E.values + self.B.values - 1.0) / self.gamma
        return CoefficientField(self.U.t, vals, self.U.chi, "C")

    @property
    def t(self) -> np.ndarray:
        return self.B.t

    @property
    def chi(self):
        return self.B.chi


# ---------------------------------------------------------------------------
# limit coefficients


def closed_form_B0(C, gamma, R):
    """Limit coefficient for ``lambda = C rho``; ``R`` is the remaining integrated resilience."""
    # B = (1 + C g) / (1 + (C + gamma) g),  g = tanh(k R) / (k R) * R / (C + 2 gamma),
    # k = sqrt(C / (C + 2 gamma)); stable down to C = 0 where B = 2 / (2 + R).
    C = np.asarray(C, dtype=float)
    R = np.asarray(R, dtype=float)
    z = np.sqrt(C / (C + 2.0 * gamma)) * R
    small = z < 1e-4
    zs = np.where(small, 1.0, z)
    tanhc = np.where(small, 1.0 - z * z / 3.0, np.tanh(zs) / zs)
    g = tanhc * R / (C + 2.0 * gamma)
    out = (1.0 + C * g) / (1.0 + (C + gamma) * g)
    return float(out) if out.ndim == 0 else out


def _driver_B0(b, rho, lam, gamma):
    """Time derivative of ``B0`` for deterministic coefficients."""
    return (gamma * (rho * b) ** 2 - 2.0 * lam * rho * (1.0 - b)) / (lam + 2.0 * gamma * rho)


def _limit_fields(t, chi, b, rho, lam, gamma) -> LimitCoefficients:
    ph = np.sqrt(lam + 2.0 * gamma * rho)
    d0 = (lam + gamma * rho * b) / ph
    e0 = rho * (2.0 - b) / ph
    return LimitCoefficients(CoefficientField(t, b, chi, "B0"),
                             CoefficientField(t, d0, chi, "D0"),
                             CoefficientField(t, e0, chi, "E0"))


def closed_form_limit(rho: SampledPath, C: float, params: ModelParams) -> LimitCoefficients:
    """Limit fields from the explicit formula (``lambda = C rho``, deterministic ``rho``)."""
    t, r = rho.t, rho.values
    seg = 0.5 * (r[1:] + r[:-1]) * np.diff(t)
    R = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    b = closed_form_B0(C, params.gamma, R)
    return _limit_fields(t, None, np.asarray(b, dtype=float), r, C * r, params.gamma)


def solve_B0_deterministic(rho: SampledPath, lam: SampledPath, params: ModelParams,
                           tol: float = 1e-9) -> LimitCoefficients:
    """Backward RK4 for ``B0`` with deterministic coefficients.

    Mid-step coefficients are linearly interpolated from the samples.
    """
    t = rho.t
    r, l = rho.values, lam.values
    g = params.gamma
    b = np.empty_like(t)
    b[-1] = 1.0
    x = 1.0
    for n in range(t.size - 2, -1, -1):
        h = t[n] - t[n + 1]
        rm, lm = 0.5 * (r[n] + r[n + 1]), 0.5 * (l[n] + l[n + 1])
        k1 = _driver_B0(x, r[n + 1], l[n + 1], g)
        k2 = _driver_B0(x + 0.5 * h * k1, rm, lm, g)
        k3 = _driver_B0(x + 0.5 * h * k2, rm, lm, g)
        k4 = _driver_B0(x + h * k3, r[n], l[n], g)
        x = x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        b[n] = x
    _check_B0(t, b, params, tol)
    return _limit_fields(t, None, b, r, l, g)


def _check_B0(t, b, params, tol):
    lower = DerivedBounds.from_params(params).B0_lower(t)
    if b.ndim == 2:
        lower = lower[:, None]
    low = float(np.max(lower - tol - b))
    high = float(np.max(b - 1.0 - tol))
    if low > 0 or high > 0 or not np.all(np.isfinite(b)):
        raise SolverFault(f"B0 left its a priori bounds (below by {low:.3e}, above by {high:.3e})")


def generator_diagonals(factor: FactorModel, t: float, chi: np.ndarray):
    """Tridiagonal finite-difference generator of the factor at time ``t``.

    Interior rows: upwind drift plus central diffusion.  End rows carry only
    the inward upwind drift (zero second derivative at the hull ends).
    """
    dx = chi[1] - chi[0]
    mu = np.broadcast_to(np.asarray(factor.mu(t, chi), dtype=float), chi.shape)
    sg = np.broadcast_to(np.asarray(factor.sigma(t, chi), dtype=float), chi.shape)
    diff = 0.5 * sg * sg / (dx * dx)
    lower = diff + np.maximum(-mu, 0.0) / dx
    upper = diff + np.maximum(mu, 0.0) / dx
    lower[0] = 0.0
    upper[0] = max(mu[0], 0.0) / dx
    lower[-1] = max(-mu[-1], 0.0) / dx
    upper[-1] = 0.0
    return lower, -(lower + upper), upper


def _apply(lower, diag, upper, v):
    out = diag * v
    out[1:] += lower[1:] * v[:-1]
    out[:-1] += upper[:-1] * v[1:]
    return out


def solve_B0_pde(factor: FactorModel, params: ModelParams, chi_grid, grid: TimeGrid,
                 theta: float = 0.5, picard_tol: float = 1e-10, max_picard: int = 50,
                 bound_tol: float = 1e-6) -> LimitCoefficients:
    """Theta-scheme for the ``B0`` semilinear PDE with frozen-coefficient Picard iteration."""
    chi = np.asarray(chi_grid, dtype=float)
    if np.ptp(np.diff(chi)) > 1e-9 * np.ptp(chi):
        raise ValueError("space grid must be uniform")
    t = grid.t
    g = params.gamma
    vals = np.empty((t.size, chi.size))
    h1 = np.ones_like(chi)
    vals[-1] = h1

    def coeffs_at(s):
        rho = np.broadcast_to(factor.rho(s, chi), chi.shape)
        lam = np.broadcast_to(factor.lam(s, chi), chi.shape)
        ph2 = lam + 2.0 * g * rho
        return rho, lam, ph2

    r1, l1, p1 = coeffs_at(t[-1])
    L1 = generator_diagonals(factor, t[-1], chi)
    for n in range(t.size - 2, -1, -1):
        k = t[n + 1] - t[n]
        r0, l0, p0 = coeffs_at(t[n])
        L0 = generator_diagonals(factor, t[n], chi)
        psi1 = (2.0 * l1 * r1 - (g * r1 * r1 * h1 + 2.0 * l1 * r1) * h1) / p1
        rhs = h1 + (1.0 - theta) * k * (_apply(*L1, h1) + psi1) + theta * k * 2.0 * l0 * r0 / p0
        lo = -theta * k * L0[0]
        up = -theta * k * L0[2]
        base = 1.0 - theta * k * L0[1]
        h = h1.copy()
        for it in range(max_picard):
            c = (g * r0 * r0 * h + 2.0 * l0 * r0) / p0
            new = K.tridiag_solve(lo, base + theta * k * c, up, rhs)
            err = float(np.max(np.abs(new - h)))
            h = new
            if err <= picard_tol:
                break
        else:
            raise SolverFault(f"Picard iteration stalled at t={t[n]:.6g} (update {err:.3e})")
        vals[n] = h
        h1, r1, l1, p1, L1 = h, r0, l0, p0, L0
    _check_B0(t, vals, params, bound_tol)
    tt, cc = np.meshgrid(t, chi, indexing="ij")
    return _limit_fields(t, chi, vals, factor.rho(tt, cc) + 0 * tt, factor.lam(tt, cc) + 0 * tt, g)


# ---------------------------------------------------------------------------
# pre-limit coefficients


def _prelimit_backward(t_grid: np.ndarray, coef_at: Callable, params: ModelParams, nx: int,
                       diffusion: Callable | None, delta0: float, max_newton: int = 50):
    p = params
    if not p.eta > 0:
        raise ValueError("pre-limit coefficients need eta > 0")
    if not p.strict and p.N < p.N_min:
        raise ValueError(f"N={p.N} is below N_min={p.N_min:.6g}")
    T = t_grid[-1]
    sq = math.sqrt(p.eta)
    s = 1.0 / sq
    kappa = DerivedBounds.from_params(p).kappa_bar
    if p.strict:
        if not delta0 > 0:
            raise ValueError("delta0 must be positive for strict liquidation")
        t_start = T - delta0 * sq
        if t_start <= 0:
            raise ValueError("delta0*sqrt(eta) exceeds the horizon")
        u_start = delta0
    else:
        t_start = T
        u_start = sq / (p.N - p.gamma)
    t = np.union1d(t_grid, [t_start])
    nt = t.size
    B = np.empty((nt, nx))
    U = np.empty((nt, nx))
    E = np.empty((nt, nx))
    tail = t > t_start
    B[tail] = 1.0
    E[tail] = 0.0
    U[tail] = ((T - t[tail]) / sq)[:, None]
    k0 = int(np.searchsorted(t, t_start))
    b = np.ones(nx)
    u = np.full(nx, u_start)
    e = np.zeros(nx)
    B[k0], U[k0], E[k0] = b, u, e
    hmax = sq / (4.0 * kappa)
    layer = 50.0 * sq / kappa
    for n in range(k0 - 1, -1, -1):
        h_full = t[n + 1] - t[n]
        m = 1
        if T - t[n] < layer and h_full > hmax:
            m = int(math.ceil(h_full / hmax))
        h = h_full / m
        for j in range(m):
            ts = t[n + 1] - (j + 1) * h
            rho, lam = coef_at(ts)
            try:
                b, u, e, _ = K.reaction_step(b, u, e, rho, lam, p.gamma, s, h, 1e-12, max_newton)
            except K.NewtonFailure as exc:
                raise SolverFault(f"coefficient step failed at t={ts:.6g}: {exc}") from None
            if diffusion is not None:
                lo, dg, up = diffusion(ts)
                rhs = np.column_stack([b, 1.0 / u, e])
                sol = K.tridiag_solve(-h * lo, 1.0 - h * dg, -h * up, rhs)
                b, u, e = sol[:, 0], 1.0 / sol[:, 1], sol[:, 2]
        B[n], U[n], E[n] = b, u, e
    return t, B, U, E, t_start


def prelimit_envelope_violation(c: PreLimitCoefficients, params: ModelParams) -> dict:
    """Largest amounts by which the fields leave their a priori envelopes on ``[0, T)``.

    Positive entries are violations.
    """
    t = c.t
    T = t[-1]
    mask = t < T
    tau = (T - t[mask])
    kb = DerivedBounds.from_params(params).kappa_bar
    s = 1.0 / math.sqrt(c.eta)
    B = c.B.values[mask]
    U = c.U.values[mask]
    E = c.E.values[mask]
    if B.ndim == 2:
        tau = tau[:, None]
    D = 1.0 / U
    e_hi = kb / params.gamma * np.tanh(s * kb * tau)
    d_hi = kb / np.tanh(s * kb * tau)
    return {
        "B_lower": float(np.max(np.exp(-params.rho_hi * tau) - B)),
        "B_upper": float(np.max(B - 1.0)),
        "E_lower": float(np.max(-E)),
        "E_upper": float(np.max(E - e_hi)),
        "D_lower": float(np.max(-D)),
        "D_upper": float(np.max(D - d_hi)),
    }


def _finish_prelimit(t, chi, B, U, E, params, t_start, tol, squeeze):
    if squeeze:
        B, U, E = B[:, 0], U[:, 0], E[:, 0]
    out = PreLimitCoefficients(CoefficientField(t, B, chi, "B"), CoefficientField(t, U, chi, "U"),
                               CoefficientField(t, E, chi, "E"), params.eta, params.N,
                               params.gamma, t_start)
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(U)) and np.all(np.isfinite(E))):
        raise SolverFault("non-finite coefficient values")
    viol = prelimit_envelope_violation(out, params)
    worst = max(viol, key=viol.get)
    if viol[worst] > tol:
        raise SolverFault(f"coefficient envelope violated: {worst} by {viol[worst]:.3e}")
    return out


def solve_prelimit_deterministic(rho: SampledPath, lam: SampledPath, params: ModelParams,
                                 delta0: float = 1e-2, bound_tol: float = 1e-6) -> PreLimitCoefficients:
    """Pre-limit fields for deterministic resilience and risk aversion on ``rho.t``."""
    rp, lp = rho, lam

    def coef_at(s):
        return np.atleast_1d(rp.at(s)), np.atleast_1d(lp.at(s))

    t, B, U, E, t0 = _prelimit_backward(rho.t, coef_at, params, 1, None, delta0)
    return _finish_prelimit(t, None, B, U, E, params, t0, bound_tol, True)


def solve_prelimit_pde(factor: FactorModel, params: ModelParams, chi_grid, grid: TimeGrid,
                       delta0: float = 1e-2, bound_tol: float = 1e-6) -> PreLimitCoefficients:
    """Pre-limit fields for a one-dimensional factor.

    Each backward step applies the implicit pointwise reaction (Newton) and
    then an implicit diffusion step for ``(B, D, E)``.
    """
    chi = np.asarray(chi_grid, dtype=float)
    if np.ptp(np.diff(chi)) > 1e-9 * np.ptp(chi):
        raise ValueError("space grid must be uniform")

    def coef_at(s):
        return (np.broadcast_to(factor.rho(s, chi), chi.shape),
                np.broadcast_to(factor.lam(s, chi), chi.shape))

    def diffusion(s):
        return generator_diagonals(factor, s, chi)

    t, B, U, E, t0 = _prelimit_backward(grid.t, coef_at, params, chi.size, diffusion, delta0)
    return _finish_prelimit(t, chi, B, U, E, params, t0, bound_tol, False)


# ---------------------------------------------------------------------------
# export and cache


def fields_to_csv(path, t, chi, **fields) -> None:
    """Long-format CSV ``t, chi, <field>...``; deterministic fields get an empty chi."""
    names = list(fields)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "chi", *names])
        if chi is None:
            for i, s in enumerate(t):
                w.writerow([repr(float(s)), "", *(repr(float(fields[k].values[i])) for k in names)])
        else:
            for i, s in enumerate(t):
                for j, x in enumerate(chi):
                    w.writerow([repr(float(s)), repr(float(x)),
                                *(repr(float(fields[k].values[i, j])) for k in names)])


def prelimit_to_csv(path, c: PreLimitCoefficients) -> None:
    fields_to_csv(path, c.t, c.chi, B=c.B, D=c.D, E=c.E)


def limit_to_csv(path, c: LimitCoefficients) -> None:
    fields_to_csv(path, c.B0.t, c.B0.chi, B0=c.B0, D0=c.D0, E0=c.E0)


def cache_key(params: ModelParams, factor: FactorModel, t, chi, extra: dict | None = None) -> str:
    """Content hash of the inputs that determine a coefficient solve.

    The factor is hashed through its sampled coefficients, so two factor
    objects that agree on the grid share a key.
    """
    hsh = hashlib.sha256()
    meta = {k: (repr(v) if isinstance(v, float) and not math.isfinite(v) else v)
            for k, v in params.__dict__.items()}
    hsh.update(json.dumps(meta, sort_keys=True, default=list).encode())
    hsh.update(json.dumps(extra or {}, sort_keys=True, default=repr).encode())
    t = np.asarray(t, dtype=float)
    hsh.update(t.tobytes())
    x = np.array([factor.chi0]) if chi is None else np.asarray(chi, dtype=float)
    hsh.update(x.tobytes())
    tt, cc = np.meshgrid(t[:: max(1, t.size // 64)], x, indexing="ij")
    for f in (factor.mu, factor.sigma, factor.f_rho, factor.f_lambda):
        hsh.update(np.ascontiguousarray(np.broadcast_to(f(tt, cc), tt.shape), dtype=float).tobytes())
    return hsh.hexdigest()[:24]


def save_prelimit(path, c: PreLimitCoefficients) -> None:
    np.savez_compressed(path, t=c.t, chi=np.array([]) if c.chi is None else c.chi,
                        B=c.B.values, U=c.U.values, E=c.E.values,
                        meta=np.array([c.eta, c.N, c.gamma, c.t_start]))


def load_prelimit(path) -> PreLimitCoefficients:
    z = np.load(path)
    chi = z["chi"] if z["chi"].size else None
    eta, N, gamma, t0 = (float(v) for v in z["meta"])
    t = z["t"]
    return PreLimitCoefficients(CoefficientField(t, z["B"], chi, "B"), CoefficientField(t, z["U"], chi, "U"),
                                CoefficientField(t, z["E"], chi, "E"), eta, N, gamma, t0)


def save_limit(path, c: LimitCoefficients) -> None:
    np.savez_compressed(path, t=c.B0.t, chi=np.array([]) if c.B0.chi is None else c.B0.chi,
                        B0=c.B0.values, D0=c.D0.values, E0=c.E0.values)


def load_limit(path) -> LimitCoefficients:
    z = np.load(path)
    chi = z["chi"] if z["chi"].size else None
    t = z["t"]
    return LimitCoefficients(CoefficientField(t, z["B0"], chi, "B0"), CoefficientField(t, z["D0"], chi, "D0"),
                             CoefficientField(t, z["E0"], chi, "E0"))

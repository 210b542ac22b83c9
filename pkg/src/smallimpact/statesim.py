"""Forward integration of the pre-limit optimal state.

The fast variable ``X`` relaxes toward ``kappa * Z`` at rate ``F / sqrt(eta)``
with ``F = D + gamma E`` and ``kappa = E / F``; each step uses the exact
solution of that linear relaxation with frozen target.  The slow variable
``Z = gamma X - Y`` follows ``dZ = rho Y dt`` by the trapezoid rule, solved
jointly with the ``X`` update.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .coeffs import PreLimitCoefficients
from .model import ModelParams
from .pathsim import PathBundle, SampledPath, stack


class IntegrationFault(RuntimeError):
    """State invariant breached; ``time`` is the first offending grid time."""

    def __init__(self, msg: str, time: float, seed: int = -1):
        super().__init__(f"{msg} at t={time:.6g} (seed {seed})")
        self.time = time
        self.seed = seed


@dataclass(frozen=True, eq=False)
class PreLimitState:
    Xhat: SampledPath
    Yhat: SampledPath
    Zhat: SampledPath
    eta: float
    N: float
    seed: int = -1

    @property
    def t(self) -> np.ndarray:
        return self.Xhat.t

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Xhat", "Yhat", "Zhat"])
            for row in zip(self.t, self.Xhat.values, self.Yhat.values, self.Zhat.values):
                w.writerow([repr(float(x)) for x in row])


def _log_mean(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (b - a) / (np.log(b) - np.log(a))
    return np.where(np.abs(b - a) <= 1e-12 * np.maximum(a, b), 0.5 * (a + b), r)


def relaxation_integrals(U, E, t, eta, gamma):
    """Integrated rate ``eta**-0.5 * int F`` over each step, with ``U = 1/D`` linear in time."""
    h = np.diff(t)
    if U.ndim == 2:
        h = h[:, None]
    u0, u1 = U[:-1], U[1:]
    with np.errstate(divide="ignore"):
        d_part = np.where(np.minimum(u0, u1) > 0, h / _log_mean(u0, u1), np.inf)
    return (d_part + gamma * h * 0.5 * (E[:-1] + E[1:])) / math.sqrt(eta)


def _fields_along(coeffs: PreLimitCoefficients, t, chi):
    if coeffs.B.deterministic:
        U = coeffs.U(t)
        E = coeffs.E(t)
        if chi is not None and chi.ndim == 2:
            U = np.repeat(U[:, None], chi.shape[1], axis=1)
            E = np.repeat(E[:, None], chi.shape[1], axis=1)
        return U, E
    tt = t[:, None] if chi.ndim == 2 else t
    return coeffs.U(tt, chi), coeffs.E(tt, chi)


def check_state(t, X, Y, Z, x0, gamma, tol=1e-8, seed=-1) -> None:
    """Sign and monotonicity invariants of the optimal state; raises ``IntegrationFault``."""
    inner = (t > 0) & (t < t[-1])
    tests = [
        ("X below 0", X < -tol * max(x0, 1.0)),
        ("X above x0", X > x0 + tol * max(x0, 1.0)),
        ("Y above 0", Y > tol * max(x0, 1.0)),
        ("Y below -gamma x0", Y < -gamma * x0 - tol * max(x0, 1.0)),
    ]
    for name, bad in tests:
        bad = bad & inner
        if np.any(bad):
            raise IntegrationFault(name, float(t[np.argmax(bad)]), seed)
    up = np.diff(Z) > tol * max(x0, 1.0)
    if np.any(up):
        raise IntegrationFault("Z increasing", float(t[1:][np.argmax(up)]), seed)


def integrate_states(coeffs: PreLimitCoefficients, bundles: Sequence[PathBundle], params: ModelParams,
                     check: bool = True, tol: float = 1e-8) -> list[PreLimitState]:
    """Optimal state along each bundle, vectorized across paths."""
    if not bundles:
        return []
    t = bundles[0].t
    for b in bundles:
        if b.t.shape != t.shape or np.any(b.t != t):
            raise ValueError("bundles must share one time grid")
    chi = stack(bundles, "chi")
    rho = stack(bundles, "rho")
    U, E = _fields_along(coeffs, t, chi)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(U > 0, E * U / (1.0 + params.gamma * E * U), 0.0)
    lam_int = relaxation_integrals(U, E, t, params.eta, params.gamma)
    X, Z = K.state_recurrence(lam_int, kappa, rho, np.diff(t), params.gamma, params.x0)
    Y = params.gamma * X - Z
    out = []
    for j, b in enumerate(bundles):
        if check:
            check_state(t, X[:, j], Y[:, j], Z[:, j], params.x0, params.gamma, tol, b.seed)
        out.append(PreLimitState(SampledPath(t, X[:, j].copy()), SampledPath(t, Y[:, j].copy()),
                                 SampledPath(t, Z[:, j].copy()), params.eta, params.N, b.seed))
    return out


def integrate_state(coeffs: PreLimitCoefficients, bundle: PathBundle, params: ModelParams,
                    check: bool = True) -> PreLimitState:
    return integrate_states(coeffs, [bundle], params, check)[0]


def liquidation_gap(state: PreLimitState) -> float:
    return float(state.Xhat.values[-1])

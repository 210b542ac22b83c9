"""The small-impact limit: optimal state and its block/continuous decomposition."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coeffs import LimitCoefficients
from .model import ModelParams
from .pathsim import PathBundle, SampledPath


class ReconstructionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LimitState:
    """Limit state along one path.

    ``Xhat0`` and ``Yhat0`` carry a repeated terminal node: the value just
    before ``T`` followed by the post-jump value.  ``Zhat0`` lives on the
    plain grid.
    """

    Zhat0: SampledPath
    Xhat0: SampledPath
    Yhat0: SampledPath
    x0: float
    initial_block: float
    terminal_block: float
    seed: int = -1

    @property
    def t(self) -> np.ndarray:
        return self.Zhat0.t

    def to_csv(self, path, V: SampledPath | None = None) -> None:
        """Columns ``t, Xhat0, Yhat0, Zhat0, Vhat``; the terminal time appears twice (pre, post)."""
        n = self.t.size
        z = np.append(self.Zhat0.values, self.Zhat0.values[-1])
        v = np.full(n + 1, np.nan) if V is None else np.append(V.values, V.values[-1])
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Xhat0", "Yhat0", "Zhat0", "Vhat"])
            for row in zip(self.Xhat0.t, self.Xhat0.values, self.Yhat0.values, z, v):
                w.writerow([repr(float(x)) for x in row])


@dataclass(frozen=True, eq=False)
class LimitStrategy:
    x0: float
    j_minus: list  # [(time, size)]
    V_hat: SampledPath

    def jumps_json(self, path) -> None:
        Path(path).write_text(json.dumps({"x0": self.x0, "j_plus": [],
                                          "j_minus": [list(j) for j in self.j_minus]}, indent=2))


def _cumtrapz(y, t):
    return np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])


def limit_profile(limit: LimitCoefficients, bundle: PathBundle, gamma: float):
    """``(B0, D0/phi, E0/phi)`` along the path, using the bundle's own ``rho``, ``lambda``, ``phi``."""
    t = bundle.t
    if limit.B0.deterministic:
        b = limit.B0(t)
    else:
        b = limit.B0(t, bundle.chi.values)
    rho, lam, ph = bundle.rho.values, bundle.lam.values, bundle.phi.values
    d0 = (lam + gamma * rho * b) / ph
    e0 = rho * (2.0 - b) / ph
    return b, d0 / ph, e0 / ph


def build_limit_state(limit: LimitCoefficients, bundle: PathBundle, params: ModelParams) -> LimitState:
    t = bundle.t
    x0, g = params.x0, params.gamma
    _, d_phi, e_phi = limit_profile(limit, bundle, g)
    rate = bundle.rho.values * d_phi
    Z = g * x0 * np.exp(-_cumtrapz(rate, t))
    X = e_phi * Z
    Y = -d_phi * Z
    tt = np.append(t, t[-1])
    Xs = SampledPath(tt, np.append(X, 0.0))
    Ys = SampledPath(tt, np.append(Y, -Z[-1]))
    return LimitState(SampledPath(t, Z), Xs, Ys, x0, float(x0 - X[0]), float(X[-1]), bundle.seed)


def decompose_limit_strategy(state: LimitState, tol: float = 1e-12) -> LimitStrategy:
    """Blocks at ``0`` and ``T`` plus the continuous part ``V = X - X_0`` on ``[0, T]``."""
    X = state.Xhat0.values
    t = state.t
    T = t[-1]
    x_pre = X[:-1]  # values on the plain grid, terminal entry is X_{T-}
    V = x_pre - x_pre[0]
    jumps = [(0.0, state.initial_block), (float(T), state.terminal_block)]
    strat = LimitStrategy(state.x0, jumps, SampledPath(t, V))
    # reconstruction on the plain grid and at the terminal post-jump node
    jm = np.where(t < T, state.initial_block, state.initial_block + state.terminal_block)
    rebuilt = state.x0 - jm + V
    target = np.append(x_pre[:-1], X[-1])
    err = float(np.max(np.abs(rebuilt - target)))
    if err > tol * max(1.0, state.x0):
        raise ReconstructionError(f"limit decomposition does not reproduce the state (error {err:.3e})")
    return strat


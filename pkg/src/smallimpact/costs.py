"""Monte Carlo evaluation of the execution cost functionals.

``cost_eta`` prices an absolutely continuous strategy with instantaneous
impact; ``cost_semimartingale`` prices block trades plus a continuous part
in the limit model.  The limit transient cost is evaluated through

    int_(0,T] (Y- + Y)/2 dX = Y_T^2/(2 gamma) - gamma/2 (j+_0 - j-_0)^2
                               - gamma/2 [V]_T + (1/gamma) int rho Y^2 dt,

which needs no stochastic integral.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .limit import LimitState, LimitStrategy
from .model import ModelParams
from .pathsim import PathBundle, SampledPath, TimeGrid
from .strategies import (RateStrategy, SemimartingaleStrategy, impact, inventory, net_jumps)


@dataclass
class CostBreakdown:
    instantaneous: float = 0.0
    transient: float = 0.0
    risk: float = 0.0
    penalty: float = 0.0
    block0: float = 0.0
    qv: float = 0.0
    total: float = 0.0
    stderr: float = 0.0
    n_paths: int = 0
    seeds: list = field(default_factory=list)
    samples: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("samples")
        return d

    def to_json(self, path, **extra) -> None:
        Path(path).write_text(json.dumps({**self.to_dict(), **extra}, indent=2, default=float))


def _aggregate(parts: list[dict], seeds) -> CostBreakdown:
    keys = ["instantaneous", "transient", "risk", "penalty", "block0", "qv"]
    totals = np.array([sum(p[k] for k in keys) for p in parts])
    n = len(parts)
    out = CostBreakdown(**{k: float(math.fsum(p[k] for p in parts) / n) for k in keys})
    out.total = float(math.fsum(totals) / n)
    out.stderr = float(totals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    out.n_paths = n
    out.seeds = [int(s) for s in seeds]
    out.samples = totals
    return out


def paired_difference(a: CostBreakdown, b: CostBreakdown) -> tuple[float, float]:
    """Mean and standard error of ``a - b`` over common paths."""
    d = a.samples - b.samples
    se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
    return float(d.mean()), se


def _trap(y, t) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def _per_path(strategy, n):
    if isinstance(strategy, (list, tuple)):
        if len(strategy) != n:
            raise ValueError("need one strategy per path")
        return list(strategy)
    return [strategy] * n


def cost_eta(xi: RateStrategy | Sequence[RateStrategy], bundles: Sequence[PathBundle],
             params: ModelParams, liq_tol: float = 1e-10) -> CostBreakdown:
    """Cost of absolutely continuous strategies with instantaneous impact ``eta``."""
    if not params.eta > 0:
        raise ValueError("cost_eta needs eta > 0")
    g = params.gamma
    parts = []
    for s, b in zip(_per_path(xi, len(bundles)), bundles):
        X = s.inventory()
        Y = impact(X, b.rho, g).values
        t = X.t
        h = np.diff(t)
        rate = s.xi.values[:-1]
        lam = b.lam.at(t)
        xT, yT = X.values[-1], Y[-1]
        if params.strict:
            if abs(xT) > liq_tol * max(1.0, params.x0):
                raise ValueError(f"strategy leaves {xT:.3e} shares under strict liquidation")
            pen = 0.0
        else:
            pen = 0.5 * params.N * xT * xT - xT * yT
        parts.append({
            "instantaneous": 0.5 * params.eta * float(np.sum(rate * rate * h)),
            "transient": float(np.sum(0.5 * (Y[1:] + Y[:-1]) * rate * h)),
            "risk": 0.5 * _trap(lam * X.values ** 2, t),
            "penalty": pen, "block0": 0.0, "qv": 0.0,
        })
    return _aggregate(parts, [b.seed for b in bundles])


def _strategy_grid(theta: SemimartingaleStrategy, bundle: PathBundle) -> TimeGrid:
    grid = bundle.W.grid
    extra = [s for s in theta.jump_times() if not np.any(np.isclose(grid.t, s, rtol=0, atol=1e-12))]
    return grid.with_nodes(extra) if extra else grid


def realized_qv(V: SampledPath) -> float:
    return float(np.sum(np.diff(V.values) ** 2))


def semimartingale_parts(theta: SemimartingaleStrategy, bundle: PathBundle, params: ModelParams,
                         liq_tol: float = 1e-10) -> dict:
    g = params.gamma
    grid = _strategy_grid(theta, bundle)
    X = inventory(theta, grid)
    if theta.liquidating and abs(X.values[-1]) > liq_tol * max(1.0, params.x0):
        raise ValueError(f"strategy leaves {X.values[-1]:.3e} shares at T")
    if not theta.liquidating:
        raise ValueError("the limit cost is defined for liquidating strategies only")
    Yp = impact(X, bundle.rho, g)
    t, Y = Yp.t, Yp.values
    j0 = sum(s for u, s in net_jumps(theta.j_plus, theta.j_minus) if u == 0.0)
    block0 = 0.5 * g * j0 * j0
    qv = 0.5 * g * (realized_qv(theta.V) if theta.V is not None else 0.0)
    rho = bundle.rho.at(t)
    lam = bundle.lam.at(t)
    transient = Y[-1] ** 2 / (2.0 * g) - block0 - qv + _trap(rho * Y * Y, t) / g
    return {"instantaneous": 0.0, "transient": float(transient),
            "risk": 0.5 * _trap(lam * X.values ** 2, t), "penalty": 0.0,
            "block0": float(block0), "qv": float(qv)}


def cost_semimartingale(theta: SemimartingaleStrategy | Sequence[SemimartingaleStrategy],
                        bundles: Sequence[PathBundle], params: ModelParams) -> CostBreakdown:
    """Limit cost of liquidating semimartingale strategies (one per path or shared)."""
    parts = [semimartingale_parts(s, b, params) for s, b in zip(_per_path(theta, len(bundles)), bundles)]
    return _aggregate(parts, [b.seed for b in bundles])


def transient_direct(theta: SemimartingaleStrategy, bundle: PathBundle, params: ModelParams) -> float:
    """``int_(0,T] (Y- + Y)/2 dX`` as a Stieltjes sum on the grid.

    Continuous steps use the left value of ``Y``; jumps after time 0 use
    the average of the pre- and post-jump values.  The block at time 0 is
    excluded (it is priced separately).
    """
    grid = _strategy_grid(theta, bundle)
    X = inventory(theta, grid)
    Y = impact(X, bundle.rho, params.gamma).values
    t = X.t
    dX = np.diff(X.values)
    jump = np.diff(t) == 0
    w = np.where(jump, 0.5 * (Y[:-1] + Y[1:]), Y[:-1])
    keep = ~(jump & (t[:-1] == 0.0))
    return float(np.sum((w * dX)[keep]))


def transient_identity(theta: SemimartingaleStrategy, bundle: PathBundle, params: ModelParams) -> float:
    return semimartingale_parts(theta, bundle, params)["transient"]


def limit_semimartingale(strategy: LimitStrategy, q: float = 0.0) -> SemimartingaleStrategy:
    """Limit strategy with continuous part tilted by ``q t``; the terminal block absorbs ``q T``."""
    V = strategy.V_hat
    T = float(V.t[-1])
    Vq = SampledPath(V.t, V.values + q * V.t)
    jm = [(s, a) for s, a in strategy.j_minus if s != T]
    jp = []
    last = dict(strategy.j_minus).get(T, 0.0) + q * T
    (jm if last >= 0 else jp).append((T, abs(last)))
    return SemimartingaleStrategy(strategy.x0, jp, jm, Vq, True)


def first_order_check(strategies: Sequence[LimitStrategy], bundles: Sequence[PathBundle],
                      params: ModelParams, q: float = 0.05, scheme: str = "central") -> float:
    """Finite-difference derivative of ``q -> J0`` along the drift tilt at ``q = 0``."""
    def J(qq):
        return cost_semimartingale([limit_semimartingale(s, qq) for s in strategies], bundles, params).total

    if scheme == "central":
        return (J(q) - J(-q)) / (2.0 * q)
    if scheme == "forward":
        return (J(q) - J(0.0)) / q
    raise ValueError(f"unknown scheme {scheme!r}")


def _cumtrapz(y, t):
    return np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])


def first_order_formula(states: Sequence[LimitState], bundles: Sequence[PathBundle],
                        params: ModelParams) -> float:
    """Closed expression for the same derivative, evaluated by quadrature along each path."""
    vals = []
    for st, b in zip(states, bundles):
        t = b.t
        rho, lam = b.rho.values, b.lam.values
        Y = st.Yhat0.values[:-1]
        X = st.Xhat0.values[:-1]
        y_T = st.Yhat0.values[-1]
        R = _cumtrapz(rho, t)
        inner = _cumtrapz(t * rho * np.exp(R), t)
        v = (-y_T * math.exp(-R[-1]) * inner[-1]
             + _trap(2.0 * t * rho * Y, t)
             - _trap(2.0 * rho * Y * np.exp(-R) * inner, t)
             + _trap(t * lam * X, t))
        vals.append(v)
    return float(np.mean(vals))


def cost_estimate_bound(d: float, x_norm: float, params: ModelParams) -> float:
    """Upper bound for ``|J0(theta) - J0(0, 0, V^xi)|``.

    ``d = E int (X^theta - X^xi)^2`` and ``x_norm = E int (X^theta)^2``.
    """
    T, g, x0 = params.T, params.gamma, params.x0
    r = params.rho_hi
    lam = params.lambda_hi
    e = math.exp(T * r)
    k = 1.0 + T * r * e
    sd, sx = math.sqrt(d), math.sqrt(x_norm)
    return (0.5 * lam * (d + 2.0 * math.sqrt(d * x_norm))
            + (0.5 * T * g * r * r * e * e + r * g * k * k) * d
            + math.sqrt(T) * g * r * e * sd * (x0 + r * e * math.sqrt(T * x_norm))
            + 2.0 * r * k * sd * (g * x0 * math.sqrt(T) + g * k * sx))


# ---------------------------------------------------------------------------
# perturbations of the limit strategy


def _snap(t, s):
    return float(t[np.argmin(np.abs(t - s))])


def perturbation_battery(strategy: LimitStrategy, state: LimitState, bundle: PathBundle
                         ) -> dict[str, SemimartingaleStrategy]:
    """Twenty admissible, non-anticipating perturbations of the limit strategy.

    Every perturbation keeps ``X_T = 0``; any change in position is absorbed
    by the terminal block.  Times are snapped to grid nodes.
    """
    t = bundle.t
    T = float(t[-1])
    V = strategy.V_hat
    x0 = strategy.x0
    b0 = state.initial_block
    Xpre = state.Xhat0.values[:-1]
    out: dict[str, SemimartingaleStrategy] = {}

    def build(name, jumps, dV):
        # jumps: signed (time, size<0 sells); the terminal block closes the position
        Vn = SampledPath(t, V.values + dV)
        held = x0 + sum(a for _, a in jumps) + Vn.values[-1]
        jumps = jumps + [(T, -held)]
        jp = [(s, a) for s, a in jumps if a > 0]
        jm = [(s, -a) for s, a in jumps if a < 0]
        out[name] = SemimartingaleStrategy(x0, jp, jm, Vn, True)

    zero = np.zeros_like(t)
    for q in (0.1, -0.1, 0.5, -0.5):
        build(f"drift_tilt_{q:+g}", [(0.0, -b0)], q * t)
    for a in (0.05, -0.05, 0.1, -0.1):
        build(f"initial_block_shift_{a:+g}", [(0.0, -(b0 + a))], zero)
    for tau in (0.02, 0.1):
        s = _snap(t, tau * T)
        build(f"initial_block_delay_{tau:g}", [(s, -b0)], zero)
    for tau in (0.05, 0.2):
        s = _snap(t, tau * T)
        build(f"initial_block_split_{tau:g}", [(0.0, -0.5 * b0), (s, -0.5 * b0)], zero)
    for tau in (0.05, 0.2):
        s = _snap(t, T - tau * T)
        i = int(np.searchsorted(t, s))
        # half of the position held at T - tau, which is known at that time
        build(f"early_terminal_sale_{tau:g}", [(0.0, -b0), (s, -0.5 * Xpre[i])], zero)
    for a in (0.05, -0.05):
        build(f"sine_tilt_{a:+g}", [(0.0, -b0)], a * np.sin(2.0 * math.pi * t / T))
    for a in (0.2, -0.2):
        build(f"quadratic_drift_{a:+g}", [(0.0, -b0)], a * t * t)
    for a in (0.05, -0.05):
        build(f"adapted_tilt_{a:+g}", [(0.0, -b0)], a * bundle.W.values)
    return out

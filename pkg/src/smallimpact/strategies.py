"""Trading strategies, their inventory and impact, and smooth approximations.

Path convention: a repeated time in a ``SampledPath`` marks a jump, with
the pre-jump value first.  At ``t = 0`` the pre-jump value is the initial
position before any block trade.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .pathsim import SampledPath, TimeGrid

Jumps = list  # [(time, size)], sizes positive


def _clean_jumps(jumps) -> list[tuple[float, float]]:
    out = sorted((float(t), float(s)) for t, s in jumps if s != 0)
    for t, s in out:
        if s < 0:
            raise ValueError(f"jump sizes must be positive, got {s} at t={t}")
    return out


def net_jumps(j_plus, j_minus) -> list[tuple[float, float]]:
    """Signed jumps ``(t, dj+ - dj-)`` merged by time."""
    acc: dict[float, float] = {}
    for t, s in j_plus:
        acc[t] = acc.get(t, 0.0) + s
    for t, s in j_minus:
        acc[t] = acc.get(t, 0.0) - s
    return sorted(acc.items())


@dataclass(frozen=True, eq=False)
class SemimartingaleStrategy:
    """Block trades ``j_plus``/``j_minus`` plus a continuous part ``V`` with ``V_0 = 0``."""

    x0: float
    j_plus: Jumps = field(default_factory=list)
    j_minus: Jumps = field(default_factory=list)
    V: SampledPath | None = None
    liquidating: bool = True

    def __post_init__(self):
        object.__setattr__(self, "j_plus", _clean_jumps(self.j_plus))
        object.__setattr__(self, "j_minus", _clean_jumps(self.j_minus))
        if self.V is not None and abs(self.V.values[0]) > 1e-14:
            raise ValueError("continuous part must start at 0")

    def jump_times(self) -> list[float]:
        return sorted({t for t, _ in self.j_plus} | {t for t, _ in self.j_minus})

    def V_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.V is None:
            return np.zeros_like(t)
        return self.V.at(t)

    def terminal_position(self) -> float:
        T = float(self.V.t[-1]) if self.V is not None else max(self.jump_times(), default=0.0)
        jumps = sum(s for _, s in net_jumps(self.j_plus, self.j_minus))
        return float(self.x0 + jumps + self.V_at(T))

    def to_json(self, path, V_ref: str = "") -> None:
        Path(path).write_text(json.dumps({
            "x0": self.x0, "j_plus": [list(j) for j in self.j_plus],
            "j_minus": [list(j) for j in self.j_minus], "V": V_ref,
            "liquidating": self.liquidating}, indent=2))


@dataclass(frozen=True, eq=False)
class RateStrategy:
    """Absolutely continuous strategy; ``xi.values[i]`` is the rate on ``[t_i, t_{i+1})``."""

    x0: float
    xi: SampledPath

    @property
    def t(self) -> np.ndarray:
        return self.xi.t

    def inventory(self) -> SampledPath:
        v = self.xi.values[:-1] * np.diff(self.t)
        return SampledPath(self.t, self.x0 + np.concatenate([[0.0], np.cumsum(v)]))

    def square_integral(self) -> float:
        return float(np.sum(self.xi.values[:-1] ** 2 * np.diff(self.t)))

    def continuous_part(self) -> SemimartingaleStrategy:
        """``(0, 0, V)`` with ``V`` the integrated rate."""
        X = self.inventory()
        return SemimartingaleStrategy(self.x0, [], [], SampledPath(X.t, X.values - self.x0),
                                      abs(X.values[-1]) <= 1e-10 * max(1.0, abs(self.x0)))


def rate_from_function(f, grid: TimeGrid, x0: float, n_sub: int = 8) -> RateStrategy:
    """Cell averages of ``f`` (Gauss-Legendre) as a piecewise constant rate."""
    t = grid.t
    nodes, weights = np.polynomial.legendre.leggauss(n_sub)
    h = np.diff(t)
    s = t[:-1, None] + 0.5 * h[:, None] * (nodes[None, :] + 1.0)
    avg = 0.5 * np.sum(f(s) * weights[None, :], axis=1)
    return RateStrategy(x0, SampledPath(t, np.append(avg, avg[-1])))


def inventory(theta: SemimartingaleStrategy, grid: TimeGrid) -> SampledPath:
    """Inventory on ``grid`` with a repeated node at every jump (pre value first)."""
    t = grid.t
    tol = 1e-12 * max(1.0, grid.T)
    jumps = net_jumps(theta.j_plus, theta.j_minus)
    V = theta.V_at(t)
    if not jumps:
        return SampledPath(t, theta.x0 + V)
    jt = np.array([j[0] for j in jumps])
    js = np.array([j[1] for j in jumps])
    where = np.searchsorted(t, jt - tol)
    if np.any(where >= t.size) or np.any(np.abs(t[np.minimum(where, t.size - 1)] - jt) > tol):
        raise ValueError(f"jump times {jt.tolist()} are not all grid nodes")
    cum = np.concatenate([[0.0], np.cumsum(js)])[np.searchsorted(jt, t + tol, side="right")]
    post = theta.x0 + cum + V
    pre = post[where] - js
    return SampledPath(np.insert(t, where, t[where]), np.insert(post, where, pre))


def _cumtrapz(y, t):
    return np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])


def _decay_weight(dR):
    """``(1 - exp(-dR)) / dR`` with the removable singularity at 0."""
    small = dR < 1e-8
    safe = np.where(small, 1.0, dR)
    return np.where(small, 1.0 - 0.5 * dR, -np.expm1(-safe) / safe)


def impact(X: SampledPath, rho: SampledPath, gamma: float) -> SampledPath:
    """Transient impact ``Y_t = gamma int_0^t exp(-int_s^t rho) dX_s``.

    Over each step ``rho`` is replaced by its trapezoid average and ``X`` is
    linear, which makes the update exact:
    ``Y+ = exp(-dR) Y + gamma dX (1 - exp(-dR)) / dR``.  Repeated nodes
    (jumps) have ``dR = 0`` and move ``Y`` by ``gamma dX``.  ``X.values[0]``
    is the position before trading starts.
    """
    t = X.t
    r = rho.at(t) if rho.t.shape != t.shape or np.any(rho.t != t) else rho.values
    R = _cumtrapz(r, t)
    dR = np.diff(R)
    inc = gamma * np.diff(X.values) * _decay_weight(dR)
    if R[-1] < 600.0:
        # Y_i = exp(-R_i) sum_{k<i} inc_k exp(R_{k+1})
        Y = np.exp(-R) * np.concatenate([[0.0], np.cumsum(inc * np.exp(R[1:]))])
    else:
        Y = np.zeros_like(t)
        decay = np.exp(-dR)
        for i in range(t.size - 1):
            Y[i + 1] = decay[i] * Y[i] + inc[i]
    return SampledPath(t, Y)


def impact_euler(X: SampledPath, rho: SampledPath, gamma: float) -> SampledPath:
    """Explicit Euler for the impact ODE on the same nodes (reference)."""
    t = X.t
    r = rho.at(t)
    Y = np.zeros_like(t)
    for i in range(t.size - 1):
        Y[i + 1] = Y[i] + gamma * (X.values[i + 1] - X.values[i]) - r[i] * Y[i] * (t[i + 1] - t[i])
    return SampledPath(t, Y)


@dataclass(frozen=True, eq=False)
class Tracked:
    """Tracker output: the tracking process and its per-step average rate."""

    V_tilde: SampledPath
    rate: SampledPath

    def error(self, V: SampledPath) -> float:
        return float(np.max(np.abs(V.at(self.V_tilde.t) - self.V_tilde.values)))


def saturation(x, beta, nu):
    return np.clip(x, -beta, beta) / nu


def tracker(V: SampledPath, beta: float, nu: float, grid: TimeGrid | None = None) -> Tracked:
    """Integrate ``dV~/dt = clamp(V - V~, -beta, beta) / nu`` from ``V~_0 = 0``.

    ``V`` is held at its left-node value within each step, so ``V~`` never
    overshoots and ``max|V~| <= max|V|`` on the grid.
    """
    t = V.t if grid is None else grid.t
    v = V.values if grid is None else V.at(t)
    vt = K.tracker_recurrence(v, t, beta, nu)
    rate = np.diff(vt) / np.diff(t)
    return Tracked(SampledPath(t, vt), SampledPath(t, np.append(rate, rate[-1])))


def _window_overlap(a, b, lo, hi):
    """Length of ``[a, b] cap [lo, hi]`` elementwise."""
    return np.clip(np.minimum(b, hi) - np.maximum(a, lo), 0.0, None)


def mollify(theta: SemimartingaleStrategy, beta: float, nu: float, eps: float,
            grid: TimeGrid) -> RateStrategy:
    """Absolutely continuous approximation of ``theta``.

    On ``[0, T - eps]`` each jump of size ``a`` at ``s`` is spread as rate
    ``a / eps`` over ``[s, s + eps)`` and the continuous part is replaced by
    the tracker rate.  Over ``(T - eps, T]`` a constant rate liquidates what
    is left.  Rates are exact cell averages on the refined grid.
    """
    T = grid.T
    if not 0 < eps < T / 2:
        raise ValueError("need 0 < eps < T/2")
    cut = T - eps
    jumps = [(s, a) for s, a in net_jumps(theta.j_plus, theta.j_minus) if s <= cut]
    g = grid.with_nodes([cut] + [min(s + eps, cut) for s, _ in jumps])
    t = g.t
    a, b = t[:-1], t[1:]
    h = b - a
    first = b <= cut + 1e-14 * T
    rate = np.zeros(h.size)
    for s, size in jumps:
        rate += size / eps * _window_overlap(a, b, s, min(s + eps, cut)) / h
    if theta.V is not None:
        tr = tracker(theta.V, beta, nu, TimeGrid(t))
        rate += np.where(first, tr.rate.values[:-1], 0.0)
    held = theta.x0 + np.sum(rate[first] * h[first])
    rate[~first] = -held / eps
    return RateStrategy(theta.x0, SampledPath(t, np.append(rate, rate[-1])))


def l2_distance(a: SampledPath, b: SampledPath, grid: TimeGrid) -> float:
    """``int (a - b)^2 dt`` by the trapezoid rule on ``grid`` (right-continuous values)."""
    t = grid.t
    d = a.at(t) - b.at(t)
    return float(np.sum(0.5 * (d[1:] ** 2 + d[:-1] ** 2) * np.diff(t)))


def post_jump_values(X: SampledPath, grid: TimeGrid) -> np.ndarray:
    """Right-continuous values of an inventory path at the grid nodes."""
    keep = np.concatenate([X.t[1:] != X.t[:-1], [True]])
    return X.values[keep]


def jump_smoothing_statistic(jumps: Sequence[tuple[float, float]], eps: float, T: float) -> float:
    """``int_0^T (j_t - j_{t-eps})^2 dt`` for a pure jump path, with ``j = 0`` before time 0.

    ``j_t - j_{t-eps}`` is the mass of jumps in ``(t - eps, t]``; it is
    piecewise constant and integrated exactly between breakpoints.
    """
    times = np.array([s for s, _ in jumps])
    sizes = np.array([a for _, a in jumps])
    cuts = np.unique(np.clip(np.concatenate([[0.0, T], times, times + eps]), 0.0, T))
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        mass = sizes[(times <= mid) & (times > mid - eps)].sum()
        total += mass * mass * (hi - lo)
    return float(total)

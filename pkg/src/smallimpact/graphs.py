"""Completed graphs, their Hausdorff distance and the eta-sweep convergence study."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from ._kernels._pykernels import resample_polyline
from .coeffs import (LimitCoefficients, PreLimitCoefficients, solve_B0_deterministic, solve_B0_pde,
                     solve_prelimit_deterministic, solve_prelimit_pde)
from .limit import build_limit_state
from .model import FactorModel, ModelParams
from .pathsim import PathBundle, SampledPath, TimeGrid, chi_hull, simulate_paths
from .statesim import integrate_states


@dataclass(frozen=True, eq=False)
class CompletedGraph:
    """Polyline through ``(t, x)``; equal consecutive times are vertical segments."""

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        if self.t.size == 0:
            raise ValueError("empty graph")
        if np.any(np.diff(self.t) < 0):
            raise ValueError("graph times must be nondecreasing")

    def vertical_segments(self) -> list[tuple[float, float, float]]:
        """``(t, low, high)`` for each vertical piece."""
        i = np.flatnonzero(np.diff(self.t) == 0)
        return [(float(self.t[k]), float(min(self.x[k], self.x[k + 1])), float(max(self.x[k], self.x[k + 1])))
                for k in i if self.x[k] != self.x[k + 1]]


def completed_graph(path: SampledPath, jumps: Sequence[tuple[float, float]] = ()) -> CompletedGraph:
    """Graph of a right-continuous path with its jumps filled in.

    Jumps already encoded as repeated nodes are kept.  ``jumps`` adds
    ``(time, pre_value)`` pairs for jumps the path does not carry, such as
    the move away from the initial position at time 0.
    """
    t = np.asarray(path.t, dtype=float)
    x = np.asarray(path.values, dtype=float)
    for s, pre in sorted(jumps):
        k = int(np.searchsorted(t, s, side="left"))
        if k >= t.size or abs(t[k] - s) > 1e-12 * max(1.0, abs(s)):
            raise ValueError(f"jump time {s} is not a node of the path")
        t = np.insert(t, k, s)
        x = np.insert(x, k, pre)
    return CompletedGraph(t, x)


def default_resolution(grid_t: np.ndarray, x0: float) -> float:
    dt = np.diff(grid_t)
    return float(np.median(dt[dt > 0])) / 4.0 * min(1.0, x0)


def hausdorff(a: CompletedGraph, b: CompletedGraph, r: float | None = None) -> float:
    """Hausdorff distance under the sup norm on ``(t, x)``.

    Each polyline is sampled at spacing ``r`` where needed and measured
    against the other; the result is within ``r`` of the exact distance.
    """
    if r is None:
        r = default_resolution(a.t, 1.0)
    return max(K.directed_polyline(a.t, a.x, b.t, b.x, r), K.directed_polyline(b.t, b.x, a.t, a.x, r))


def hausdorff_dense(a: CompletedGraph, b: CompletedGraph, r: float) -> float:
    """Same distance by full resampling of both polylines (slow reference)."""
    pa = resample_polyline(a.t, a.x, r)
    pb = resample_polyline(b.t, b.x, r)
    return max(K.directed_linf(pa, b.t, b.x, r), K.directed_linf(pb, a.t, a.x, r))


def modulus_of_continuity(path: SampledPath, nu: float) -> float:
    """``sup |Y_t - Y_s|`` over grid pairs with ``|t - s| <= nu`` (sparse-table range queries)."""
    t, y = path.t, path.values
    n = t.size
    end = np.searchsorted(t, t + nu * (1 + 1e-12), side="right")  # window [i, end)
    levels_max, levels_min = [y], [y]
    k = 1
    while 2 * k <= n:
        levels_max.append(np.maximum(levels_max[-1][:-k], levels_max[-1][k:]))
        levels_min.append(np.minimum(levels_min[-1][:-k], levels_min[-1][k:]))
        k *= 2
    length = end - np.arange(n)
    lev = np.floor(np.log2(length)).astype(int)
    span = 1 << lev
    out = 0.0
    for L in np.unique(lev):
        idx = np.flatnonzero(lev == L)
        mx, mn = levels_max[L], levels_min[L]
        j = end[idx] - span[idx]
        hi = np.maximum(mx[idx], mx[j])
        lo = np.minimum(mn[idx], mn[j])
        out = max(out, float(np.max(hi - lo)))
    return out


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class ConvergenceReport:
    eta_values: list
    eps: float
    seeds: list
    sup_distances: dict = field(default_factory=dict)   # metric -> per-eta list
    state_distances: dict = field(default_factory=dict)  # "mean"/"max"/"per_path" -> per-eta
    hausdorff: dict = field(default_factory=dict)        # "mean"/"median"/"max"/"per_path"
    fraction_within: dict = field(default_factory=dict)  # str(eps') -> per-eta fractions
    band_fraction: list = field(default_factory=list)
    liquidation_gap: list = field(default_factory=list)
    clamp_fraction: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, default=float))

    def to_csv(self, path) -> None:
        cols = ["eta", *(f"sup_{k}" for k in self.sup_distances), "state_mean", "state_max",
                "hausdorff_mean", "hausdorff_max", *(f"within_{k}" for k in self.fraction_within),
                "band_fraction", "liquidation_gap"]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for i, eta in enumerate(self.eta_values):
                w.writerow([eta, *(v[i] for v in self.sup_distances.values()),
                            self.state_distances["mean"][i], self.state_distances["max"][i],
                            self.hausdorff["mean"][i], self.hausdorff["max"][i],
                            *(v[i] for v in self.fraction_within.values()),
                            self.band_fraction[i], self.liquidation_gap[i]])


def coefficient_distances(pre: PreLimitCoefficients, lim: LimitCoefficients, factor: FactorModel,
                          params: ModelParams, eps: float) -> dict:
    """Sup norms of ``B - B0``, ``D - D0``, ``E - E0``, ``F - phi``, ``G - 2 rho`` on ``[0, T - eps]``."""
    t = pre.t
    m = t <= params.T - eps + 1e-12
    tm = t[m]
    if pre.chi is None:
        chi = np.full_like(tm, factor.chi0)
        B, U, E = pre.B.values[m], pre.U.values[m], pre.E.values[m]
        B0, D0, E0 = lim.B0(tm), lim.D0(tm), lim.E0(tm)
        tt, cc = tm, chi
    else:
        tt, cc = np.meshgrid(tm, pre.chi, indexing="ij")
        B, U, E = pre.B.values[m], pre.U.values[m], pre.E.values[m]
        B0, D0, E0 = lim.B0(tt, cc), lim.D0(tt, cc), lim.E0(tt, cc)
    rho = np.broadcast_to(factor.rho(tt, cc), B.shape)
    lam = np.broadcast_to(factor.lam(tt, cc), B.shape)
    ph = np.sqrt(lam + 2.0 * params.gamma * rho)
    D = 1.0 / U
    return {
        "b": float(np.max(np.abs(B - B0))),
        "d": float(np.max(np.abs(D - D0))),
        "e": float(np.max(np.abs(E - E0))),
        "f": float(np.max(np.abs(D + params.gamma * E - ph))),
        "g": float(np.max(np.abs(rho * B + ph * E - 2.0 * rho))),
    }


def limit_graph(state) -> CompletedGraph:
    return completed_graph(state.Xhat0, [(0.0, state.x0)])


def convergence_study(params: ModelParams, factor: FactorModel, etas: Sequence[float],
                      seeds: Sequence[int], eps: float = 0.05, grid: TimeGrid | None = None,
                      chi_grid=None, r: float | None = None, within: Sequence[float] | None = None,
                      delta0: float = 1e-2, threads: int = 1) -> ConvergenceReport:
    """Run the full pipeline for each ``eta`` on common paths and collect distances to the limit."""
    etas = [float(e) for e in etas]
    if any(e2 >= e1 for e1, e2 in zip(etas, etas[1:])):
        raise ValueError("etas must be strictly decreasing")
    grid = grid or TimeGrid.refined(params.T)
    base = params.replace(eta=0.0, N=math.inf)
    bundles = simulate_paths(factor, base, grid, seeds)
    if factor.deterministic:
        lim = solve_B0_deterministic(bundles[0].rho, bundles[0].lam, base)
        chi = None
    else:
        chi = chi_hull(factor, params.T) if chi_grid is None else np.asarray(chi_grid, float)
        lim = solve_B0_pde(factor, base, chi, grid)
    lstates = [build_limit_state(lim, b, base) for b in bundles]
    lgraphs = [limit_graph(s) for s in lstates]
    r = r if r is not None else default_resolution(grid.t, params.x0)
    within = list(within) if within is not None else [eps]
    t = grid.t
    T = params.T
    mid = (t >= eps) & (t <= T - eps)
    late = t >= eps
    early = t <= T - eps

    def one(eta):
        p = params.replace(eta=eta)
        if factor.deterministic:
            pre = solve_prelimit_deterministic(bundles[0].rho, bundles[0].lam, p, delta0)
        else:
            pre = solve_prelimit_pde(factor, p, chi, grid, delta0)
        states = integrate_states(pre, bundles, p)
        dist = coefficient_distances(pre, lim, factor, p, eps)
        sd, hd, band, gap = [], [], [], []
        for st, ls, lg in zip(states, lstates, lgraphs):
            X = st.Xhat.values
            X0 = np.append(ls.Xhat0.values[:-2], 0.0)  # right-continuous limit on the grid
            diff = X - X0
            sd.append(float(np.max(np.abs(diff[mid]))))
            band.append(bool(np.all(diff[late] <= eps) and np.all(diff[early] >= -eps)))
            hd.append(hausdorff(completed_graph(st.Xhat), lg, r))
            gap.append(float(X[-1]))
        clamp = 0.0 if pre.chi is None else pre.U.clamp_fraction
        return dist, sd, hd, band, gap, clamp

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, etas))
    else:
        results = [one(e) for e in etas]

    rep = ConvergenceReport(etas, eps, [int(s) for s in seeds])
    for key in ("b", "d", "e", "f", "g"):
        rep.sup_distances[key] = [res[0][key] for res in results]
    rep.state_distances = {"mean": [float(np.mean(r_[1])) for r_ in results],
                           "max": [float(np.max(r_[1])) for r_ in results],
                           "per_path": [r_[1] for r_ in results]}
    rep.hausdorff = {"mean": [float(np.mean(r_[2])) for r_ in results],
                     "median": [float(np.median(r_[2])) for r_ in results],
                     "max": [float(np.max(r_[2])) for r_ in results],
                     "per_path": [r_[2] for r_ in results]}
    for w in within:
        rep.fraction_within[f"{w:g}"] = [float(np.mean(np.array(r_[2]) <= w)) for r_ in results]
    rep.band_fraction = [float(np.mean(r_[3])) for r_ in results]
    rep.liquidation_gap = [float(np.mean(r_[4])) for r_ in results]
    rep.clamp_fraction = [r_[5] for r_ in results]
    rep.meta = {"n_paths": len(bundles), "grid_nodes": int(t.size), "resolution": r,
                "backend": K.BACKEND, "factor": factor.family}
    return rep


def inversions(values: Sequence[float]) -> int:
    """Number of consecutive increases in a sequence expected to decrease."""
    return int(sum(1 for a, b in zip(values, values[1:]) if b > a))

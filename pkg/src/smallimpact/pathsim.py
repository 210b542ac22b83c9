"""Time grids, sampled paths and common-random-number simulation of the factor.

Seed to path map: path ``seed`` draws its Gaussian increments from
``numpy.random.Generator(numpy.random.Philox(key=seed))`` as one
``standard_normal(n_steps)`` call in grid order, scaled by ``sqrt(dt)``.
The map depends only on the seed and the number of grid steps, so every
eta in a sweep sees bit-identical drivers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import FactorModel, ModelError, ModelParams, phi


@dataclass(frozen=True, eq=False)
class TimeGrid:
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("time grid needs at least two nodes")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def dt_max(self) -> float:
        return float(self.dt.max())

    def __len__(self) -> int:
        return self.t.size

    @classmethod
    def uniform(cls, T: float, n: int) -> "TimeGrid":
        return cls(np.linspace(0.0, T, n + 1))

    @classmethod
    def refined(cls, T: float, n: int = 4096, tail: float = 0.05, ratio: float = 0.97,
                s_min: float = 1e-7) -> "TimeGrid":
        """Uniform ``n``-step grid plus geometric nodes ``T - s`` in the last ``tail*T``.

        Geometric nodes are added where their spacing ``(1-ratio) s`` beats the
        uniform step, down to ``s = s_min * T``.
        """
        base = np.linspace(0.0, T, n + 1)
        h = T / n
        s = min(tail * T, h / (1.0 - ratio))
        extra = []
        while s > s_min * T:
            extra.append(T - s)
            s *= ratio
        t = np.union1d(base, np.asarray(extra))
        keep = np.concatenate([[True], np.diff(t) > 1e-14 * T])
        return cls(t[keep])

    def with_nodes(self, nodes) -> "TimeGrid":
        t = np.union1d(self.t, np.asarray(nodes, dtype=float))
        t = t[(t >= 0) & (t <= self.T)]
        keep = np.concatenate([[True], np.diff(t) > 1e-14 * self.T])
        return TimeGrid(t[keep])


@dataclass(frozen=True, eq=False)
class SampledPath:
    """Values on nondecreasing times; a repeated time marks a jump (pre value first)."""

    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if np.any(np.diff(t) < 0):
            raise ValueError("times must be nondecreasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.t.size

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.t)

    def at(self, s):
        """Right-continuous linear interpolation."""
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.t, s, side="right") - 1
        idx = np.clip(idx, 0, self.t.size - 2)
        t0, t1 = self.t[idx], self.t[idx + 1]
        v0, v1 = self.values[idx], self.values[idx + 1]
        w = np.where(t1 > t0, (s - t0) / np.where(t1 > t0, t1 - t0, 1.0), 1.0)
        w = np.clip(w, 0.0, 1.0)
        return v0 + w * (v1 - v0)

    def post_jump(self) -> "SampledPath":
        """Drop pre-jump duplicates, keeping the right-continuous value at each time."""
        keep = np.concatenate([self.t[1:] != self.t[:-1], [True]])
        return SampledPath(self.t[keep], self.values[keep])


@dataclass(frozen=True, eq=False)
class PathBundle:
    seed: int
    W: SampledPath
    chi: SampledPath
    rho: SampledPath
    lam: SampledPath
    phi: SampledPath

    @property
    def t(self) -> np.ndarray:
        return self.W.t

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "W", "chi", "rho", "lambda", "phi"])
            for row in zip(self.t, self.W.values, self.chi.values, self.rho.values,
                           self.lam.values, self.phi.values):
                w.writerow([repr(float(x)) for x in row])


def simulate_brownian(grid: TimeGrid, seed: int) -> SampledPath:
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    z = rng.standard_normal(len(grid) - 1)
    W = np.concatenate([[0.0], np.cumsum(z * np.sqrt(grid.dt))])
    return SampledPath(grid.t, W)


def euler_maruyama(factor: FactorModel, t: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Euler scheme for the factor; ``W`` may be ``(n,)`` or ``(n, paths)``."""
    W = np.asarray(W, dtype=float)
    chi = np.empty_like(W)
    chi[0] = factor.chi0
    dW = np.diff(W, axis=0)
    dt = np.diff(t)
    for i in range(t.size - 1):
        x = chi[i]
        chi[i + 1] = x + factor.mu(t[i], x) * dt[i] + factor.sigma(t[i], x) * dW[i]
    return chi


def simulate_factor(factor: FactorModel, W: SampledPath, params: ModelParams,
                    seed: int = -1, check: bool = True) -> PathBundle:
    """Factor, resilience, risk aversion and ``phi`` along one Brownian path.

    Raises ``ModelError`` when ``f_rho`` or ``f_lambda`` leave the declared bounds.
    """
    t = W.t
    if factor.deterministic:
        chi = np.full_like(t, factor.chi0)
    else:
        chi = euler_maruyama(factor, t, W.values)
    rho = factor.rho(t, chi)
    lam = factor.lam(t, chi)
    if check:
        tol = 1e-12
        bad = []
        if rho.min() < params.rho_lo - tol or rho.max() > params.rho_hi + tol:
            i = int(np.argmax((rho < params.rho_lo - tol) | (rho > params.rho_hi + tol)))
            bad.append(f"rho={rho[i]:.6g} at t={t[i]:.6g} leaves {params.rho_bounds}")
        if lam.min() < -tol or lam.max() > params.lambda_hi + tol:
            i = int(np.argmax((lam < -tol) | (lam > params.lambda_hi + tol)))
            bad.append(f"lambda={lam[i]:.6g} at t={t[i]:.6g} leaves {params.lambda_bounds}")
        if bad:
            raise ModelError("; ".join(bad))
    ph = phi(rho, lam, params.gamma)
    return PathBundle(int(seed), W, SampledPath(t, chi), SampledPath(t, rho),
                      SampledPath(t, lam), SampledPath(t, np.asarray(ph, dtype=float)))


def simulate_paths(factor: FactorModel, params: ModelParams, grid: TimeGrid,
                   seeds: Sequence[int]) -> list[PathBundle]:
    out = []
    for s in seeds:
        W = simulate_brownian(grid, s)
        out.append(simulate_factor(factor, W, params, seed=s))
    return out


def stack(bundles: Sequence[PathBundle], name: str) -> np.ndarray:
    """``(n_times, n_paths)`` array of one bundle component."""
    return np.stack([getattr(b, name).values for b in bundles], axis=1)


def chi_hull(factor: FactorModel, T: float, width: float = 6.0, n: int = 241,
             t_probe: int = 17) -> np.ndarray:
    """Uniform space grid covering ``width`` standard deviations of the factor at ``T``."""
    t = np.linspace(0.0, T, t_probe)
    s = float(np.max(np.abs(factor.sigma(t, np.full_like(t, factor.chi0)))))
    half = max(width * s * math.sqrt(T), 1e-6)
    return np.linspace(factor.chi0 - half, factor.chi0 + half, n)

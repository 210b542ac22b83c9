"""Model constants, the factor model and the elementary derived bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Coef = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ModelError(ValueError):
    """Raised for inadmissible model configurations."""


@dataclass(frozen=True)
class ModelParams:
    gamma: float
    T: float
    x0: float
    eta: float = 0.0
    N: float = math.inf
    rho_bounds: tuple[float, float] = (1.0, 1.0)
    lambda_bounds: tuple[float, float] = (0.0, 0.0)

    @property
    def rho_lo(self) -> float:
        return float(self.rho_bounds[0])

    @property
    def rho_hi(self) -> float:
        return float(self.rho_bounds[1])

    @property
    def lambda_hi(self) -> float:
        return float(self.lambda_bounds[1])

    @property
    def N_min(self) -> float:
        return lower_penalty(self.gamma, self.eta, self.lambda_hi, self.rho_hi)

    @property
    def strict(self) -> bool:
        return math.isinf(self.N)

    def replace(self, **changes) -> "ModelParams":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return ModelParams(**values)


def lower_penalty(gamma: float, eta: float, lambda_hi: float, rho_hi: float) -> float:
    """Smallest admissible penalization factor for instantaneous impact ``eta``."""
    return gamma + 1.0 + math.sqrt(2.0 * eta * max(lambda_hi, gamma * rho_hi))


def _const(c: float) -> Coef:
    def f(t, chi):
        return np.full(np.broadcast(np.asarray(t), np.asarray(chi)).shape, float(c))

    return f


@dataclass(frozen=True)
class FactorModel:
    """One-dimensional Ito factor driving resilience and risk aversion.

    ``mu``, ``sigma``, ``f_rho`` and ``f_lambda`` take ``(t, chi)`` arrays and
    must broadcast.  ``family`` and ``params`` identify named families; they
    are only used for display and cache keys.
    """

    mu: Coef
    sigma: Coef
    f_rho: Coef
    f_lambda: Coef
    chi0: float = 0.0
    deterministic: bool = False
    family: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def rho(self, t, chi):
        return np.asarray(self.f_rho(t, chi), dtype=float)

    def lam(self, t, chi):
        return np.asarray(self.f_lambda(t, chi), dtype=float)


def constant_factor(rho: float = 1.0, lam: float = 1.0) -> FactorModel:
    return FactorModel(
        mu=_const(0.0), sigma=_const(0.0), f_rho=_const(rho), f_lambda=_const(lam),
        chi0=0.0, deterministic=True, family="constant",
        params={"rho": rho, "lambda": lam},
    )


def lambda_prop_rho_factor(C: float = 1.0, rho: float = 1.0) -> FactorModel:
    """Constant resilience with risk aversion ``lambda = C * rho``."""
    return FactorModel(
        mu=_const(0.0), sigma=_const(0.0), f_rho=_const(rho), f_lambda=_const(C * rho),
        chi0=0.0, deterministic=True, family="lambda-equals-C-rho",
        params={"C": C, "rho": rho},
    )


def sine_factor(level: float = 1.0, amplitude: float = 0.9, frequency: float = 2.5,
                lam: float = 1.0) -> FactorModel:
    """``rho = level + amplitude * sin(frequency * W)`` with the factor equal to ``W``."""

    def f_rho(t, chi):
        return level + amplitude * np.sin(frequency * np.asarray(chi, dtype=float)) + 0.0 * np.asarray(t)

    return FactorModel(
        mu=_const(0.0), sigma=_const(1.0), f_rho=f_rho, f_lambda=_const(lam),
        chi0=0.0, deterministic=False, family="fig1-sine",
        params={"level": level, "amplitude": amplitude, "frequency": frequency, "lambda": lam},
    )


FAMILIES = {
    "constant": constant_factor,
    "lambda-equals-C-rho": lambda_prop_rho_factor,
    "fig1-sine": sine_factor,
}


def make_factor(family: str, **kwargs) -> FactorModel:
    try:
        build = FAMILIES[family]
    except KeyError:
        raise ModelError(f"unknown factor family {family!r}; known: {sorted(FAMILIES)}") from None
    return build(**kwargs)


def phi(rho, lam, gamma):
    """``sqrt(lam + 2 gamma rho)``; works elementwise on arrays."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ModelError("phi needs strictly positive resilience")
    out = np.sqrt(np.asarray(lam, dtype=float) + 2.0 * gamma * rho)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DerivedBounds:
    kappa_bar: float
    phi_bounds: tuple[float, float]
    gamma: float
    rho_hi: float
    T: float

    @classmethod
    def from_params(cls, p: ModelParams) -> "DerivedBounds":
        kappa = math.sqrt(2.0 * max(p.lambda_hi, p.gamma * p.rho_hi))
        lo = math.sqrt(2.0 * p.gamma * p.rho_lo)
        hi = math.sqrt(p.lambda_hi + 2.0 * p.gamma * p.rho_hi)
        return cls(kappa, (lo, hi), p.gamma, p.rho_hi, p.T)

    def B0_lower(self, t):
        lo = self.phi_bounds[0]
        return np.exp(-self.gamma * self.rho_hi**2 / lo**2 * (self.T - np.asarray(t, dtype=float)))


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "valid" if self.ok else "; ".join(self.problems)


def validate(params: ModelParams, factor: FactorModel | None = None,
             n_t: int = 33, n_chi: int = 201, width: float = 6.0) -> ValidationReport:
    """Check every model invariant; the returned report is empty iff the model is admissible.

    Factor bounds are checked on a ``n_t x n_chi`` sample of
    ``[0, T] x [chi0 - width*s*sqrt(T), chi0 + width*s*sqrt(T)]``.
    """
    rep = ValidationReport()
    p = params
    if not p.gamma > 0:
        rep.problems.append(f"gamma must be positive, got {p.gamma}")
    if not p.T > 0:
        rep.problems.append(f"T must be positive, got {p.T}")
    if not p.x0 > 0:
        rep.problems.append(f"x0 must be positive, got {p.x0}")
    if not p.eta >= 0:
        rep.problems.append(f"eta must be nonnegative, got {p.eta}")
    if not 0 < p.rho_lo <= p.rho_hi < math.inf:
        rep.problems.append(f"need 0 < rho_lo <= rho_hi < inf, got {p.rho_bounds}")
    if not (p.lambda_bounds[0] == 0 and 0 <= p.lambda_hi < math.inf):
        rep.problems.append(f"lambda bounds must be (0, lambda_hi) with finite lambda_hi, got {p.lambda_bounds}")
    if p.eta > 0 and not math.isinf(p.N) and rep.ok:
        n_min = p.N_min
        if p.N < n_min:
            rep.problems.append(f"N={p.N} is below the admissible minimum N_min={n_min:.6g}")
    if factor is None or not rep.ok:
        return rep

    t = np.linspace(0.0, p.T, n_t)
    sig0 = np.max(np.abs(factor.sigma(t, np.full_like(t, factor.chi0))))
    half = width * max(sig0, 1e-12) * math.sqrt(p.T)
    chi = np.linspace(factor.chi0 - half, factor.chi0 + half, n_chi)
    tt, cc = np.meshgrid(t, chi, indexing="ij")
    rho = factor.rho(tt, cc)
    lam = factor.lam(tt, cc)
    mu = np.asarray(factor.mu(tt, cc), dtype=float)
    sg = np.asarray(factor.sigma(tt, cc), dtype=float)
    tol = 1e-12
    if rho.min() < p.rho_lo - tol or rho.max() > p.rho_hi + tol:
        rep.problems.append(
            f"f_rho range [{rho.min():.6g}, {rho.max():.6g}] leaves rho_bounds {p.rho_bounds}")
    if lam.min() < -tol or lam.max() > p.lambda_hi + tol:
        rep.problems.append(
            f"f_lambda range [{lam.min():.6g}, {lam.max():.6g}] leaves lambda_bounds {p.lambda_bounds}")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sg))):
        rep.problems.append("mu or sigma is not finite on the working domain")
    if factor.deterministic and np.any(sg != 0):
        rep.problems.append("factor flagged deterministic but sigma is nonzero")
    return rep

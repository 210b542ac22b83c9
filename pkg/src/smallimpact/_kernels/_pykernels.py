"""NumPy implementations of the inner loops (reference and fallback backend)."""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_banded
from scipy.spatial import cKDTree

BACKEND = "python"


class NewtonFailure(RuntimeError):
    pass


def reaction_step(B, U, E, rho, lam, gamma, s, h, tol=1e-12, maxit=50):
    """One backward implicit Euler step of the pointwise coefficient reaction.

    Unknowns are ``B``, ``U = 1/D`` and ``E`` at each space node; ``s`` is
    ``eta**-0.5`` and ``h`` the step.  Returns the new ``(B, U, E)`` and the
    number of Newton iterations used.
    """
    B0 = np.array(B, dtype=float, copy=True)
    U0 = np.array(U, dtype=float, copy=True)
    E0 = np.array(E, dtype=float, copy=True)
    if B0.size == 1:
        b, u, e, it = _reaction_scalar(float(B0.ravel()[0]), float(U0.ravel()[0]), float(E0.ravel()[0]),
                                       float(np.ravel(rho)[0]), float(np.ravel(lam)[0]),
                                       gamma, s, h, tol, maxit)
        return np.full_like(B0, b), np.full_like(U0, u), np.full_like(E0, e), it
    rho = np.broadcast_to(np.asarray(rho, dtype=float), B0.shape)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), B0.shape)
    b, u, e = B0.copy(), U0.copy(), E0.copy()
    for it in range(1, maxit + 1):
        iu = 1.0 / u
        g = lam + gamma * rho * b
        rb = b - B0 - h * (e * iu - rho * b)
        ru = u - U0 - h * s * (1.0 + gamma * e * u - g * u * u)
        re = e - E0 - h * (-2.0 * rho * e + s * (2.0 * rho - rho * b - e * iu - gamma * e * e))
        # Jacobian of the residual
        a11 = 1.0 + h * rho
        a12 = h * e * iu * iu
        a13 = -h * iu
        a21 = h * s * gamma * rho * u * u
        a22 = 1.0 - h * s * (gamma * e - 2.0 * g * u)
        a23 = -h * s * gamma * u
        a31 = h * s * rho
        a32 = -h * s * e * iu * iu
        a33 = 1.0 + h * (2.0 * rho + s * (iu + 2.0 * gamma * e))
        det = (a11 * (a22 * a33 - a23 * a32) - a12 * (a21 * a33 - a23 * a31)
               + a13 * (a21 * a32 - a22 * a31))
        db = (rb * (a22 * a33 - a23 * a32) - a12 * (ru * a33 - a23 * re) + a13 * (ru * a32 - a22 * re)) / det
        du = (a11 * (ru * a33 - a23 * re) - rb * (a21 * a33 - a23 * a31) + a13 * (a21 * re - ru * a31)) / det
        de = (a11 * (a22 * re - ru * a32) - a12 * (a21 * re - ru * a31) + rb * (a21 * a32 - a22 * a31)) / det
        lim = np.where(du > 0.9 * u, 0.9 * u / np.where(du > 0, du, 1.0), 1.0)
        b -= lim * db
        u -= lim * du
        e -= lim * de
        err = max(np.max(np.abs(db) / (1.0 + np.abs(b))),
                  np.max(np.abs(du) / (1.0 + np.abs(u))),
                  np.max(np.abs(de) / (1.0 + np.abs(e))))
        if err <= tol and np.all(lim == 1.0):
            return b, u, e, it
    raise NewtonFailure(f"reaction Newton did not converge in {maxit} iterations (last update {err:.3e})")


def _reaction_scalar(B0, U0, E0, rho, lam, gamma, s, h, tol, maxit):
    b, u, e = B0, U0, E0
    err = math.inf
    for it in range(1, maxit + 1):
        iu = 1.0 / u
        g = lam + gamma * rho * b
        rb = b - B0 - h * (e * iu - rho * b)
        ru = u - U0 - h * s * (1.0 + gamma * e * u - g * u * u)
        re = e - E0 - h * (-2.0 * rho * e + s * (2.0 * rho - rho * b - e * iu - gamma * e * e))
        a11 = 1.0 + h * rho
        a12 = h * e * iu * iu
        a13 = -h * iu
        a21 = h * s * gamma * rho * u * u
        a22 = 1.0 - h * s * (gamma * e - 2.0 * g * u)
        a23 = -h * s * gamma * u
        a31 = h * s * rho
        a32 = -h * s * e * iu * iu
        a33 = 1.0 + h * (2.0 * rho + s * (iu + 2.0 * gamma * e))
        c1 = a22 * a33 - a23 * a32
        c2 = a21 * a33 - a23 * a31
        c3 = a21 * a32 - a22 * a31
        det = a11 * c1 - a12 * c2 + a13 * c3
        db = (rb * c1 - a12 * (ru * a33 - a23 * re) + a13 * (ru * a32 - a22 * re)) / det
        du = (a11 * (ru * a33 - a23 * re) - rb * c2 + a13 * (a21 * re - ru * a31)) / det
        de = (a11 * (a22 * re - ru * a32) - a12 * (a21 * re - ru * a31) + rb * c3) / det
        lim = 0.9 * u / du if du > 0.9 * u else 1.0
        b -= lim * db
        u -= lim * du
        e -= lim * de
        err = max(abs(db) / (1.0 + abs(b)), abs(du) / (1.0 + abs(u)), abs(de) / (1.0 + abs(e)))
        if err <= tol and lim == 1.0:
            return b, u, e, it
    raise NewtonFailure(f"reaction Newton did not converge in {maxit} iterations (last update {err:.3e})")


def tridiag_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system; ``lower[0]`` and ``upper[-1]`` are ignored.

    ``rhs`` may hold several right-hand sides as columns.
    """
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


def state_recurrence(lam_int, kappa, rho, dt, gamma, x0):
    """Forward recurrence for the pre-limit state.

    ``lam_int[i]`` is the integrated relaxation rate over step ``i``,
    ``kappa`` the relaxation target per unit of ``Z`` at the nodes and
    ``rho`` the resilience at the nodes; arrays are ``(n,)`` or
    ``(n, paths)``.  Returns ``(X, Z)``.
    """
    kappa = np.asarray(kappa, dtype=float)
    rho = np.asarray(rho, dtype=float)
    n = kappa.shape[0]
    X = np.empty(kappa.shape)
    Z = np.empty(kappa.shape)
    X[0] = x0
    Z[0] = gamma * x0
    decay = np.exp(-np.asarray(lam_int, dtype=float))
    for i in range(n - 1):
        h = dt[i]
        e = decay[i]
        k = kappa[i + 1] * (1.0 - e)
        a = 1.0 + 0.5 * h * rho[i + 1]
        c = 0.5 * h * rho[i + 1] * gamma
        b = Z[i] + 0.5 * h * rho[i] * (gamma * X[i] - Z[i])
        Z[i + 1] = (b + c * X[i] * e) / (a - c * k)
        X[i + 1] = k * Z[i + 1] + X[i] * e
    return X, Z


def tracker_recurrence(V, t, beta, nu):
    """Saturating tracker driven by ``V`` frozen at the left node of each step."""
    V = np.asarray(V, dtype=float)
    out = np.empty_like(V)
    out[0] = 0.0
    dt = np.diff(t)
    speed = beta / nu
    for i in range(V.shape[0] - 1):
        h = dt[i]
        d = V[i] - out[i]
        a = np.abs(d)
        sg = np.sign(d)
        t_hit = np.where(a > beta, (a - beta) / speed, 0.0)
        sat = t_hit >= h
        rest = np.maximum(h - t_hit, 0.0)
        d_in = np.where(a > beta, sg * beta, d)
        lin = V[i] - d_in * np.exp(-rest / nu)
        out[i + 1] = np.where(sat, out[i] + sg * speed * h, lin)
    return out


def resample_polyline(t, x, r):
    """Points along the polyline with consecutive sup-norm spacing at most ``r``."""
    dt = np.diff(t)
    dx = np.diff(x)
    k = np.maximum(np.ceil(np.maximum(np.abs(dt), np.abs(dx)) / r).astype(np.int64), 1)
    seg = np.repeat(np.arange(dt.size), k)
    start = np.repeat(np.cumsum(k) - k, k)
    frac = (np.arange(seg.size) - start) / k[seg]
    pt = np.concatenate([t[seg] + frac * dt[seg], t[-1:]])
    px = np.concatenate([x[seg] + frac * dx[seg], x[-1:]])
    return np.column_stack([pt, px])


def directed_linf(points, t, x, r):
    """``max_p min_q |p - q|_inf`` from sample points to the polyline ``(t, x)``.

    The polyline is resampled at spacing ``r``, so the result overshoots the
    exact distance by at most ``r/2``.
    """
    cloud = resample_polyline(np.asarray(t, float), np.asarray(x, float), r)
    d, _ = cKDTree(cloud).query(points, k=1, p=np.inf)
    return float(np.max(d))


def directed_polyline(ta, xa, tb, xb, r):
    """``sup_{p in A} min_{q in B} |p - q|_inf`` for polylines, within ``r``.

    Vertex distances bound the distance along each segment of ``A`` by
    ``(d_i + d_{i+1} + len_i) / 2``; only segments whose bound can still
    beat the running maximum are sampled at spacing ``r``.
    """
    ta, xa = np.asarray(ta, float), np.asarray(xa, float)
    cloud = cKDTree(resample_polyline(np.asarray(tb, float), np.asarray(xb, float), r))
    d, _ = cloud.query(np.column_stack([ta, xa]), k=1, p=np.inf)
    best = float(np.max(d))
    if ta.size < 2:
        return best
    seg = np.maximum(np.abs(np.diff(ta)), np.abs(np.diff(xa)))
    ub = 0.5 * (d[:-1] + d[1:] + seg)
    for i in np.argsort(-ub):
        if ub[i] <= best + 0.5 * r:
            break
        pts = resample_polyline(ta[i:i + 2], xa[i:i + 2], r)
        best = max(best, float(np.max(cloud.query(pts, k=1, p=np.inf)[0])))
    return best

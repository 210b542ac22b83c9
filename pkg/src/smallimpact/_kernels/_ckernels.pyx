# cython: language_level=3
"""Compiled versions of the inner loops; same signatures as ``_pykernels``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, fmax, fmin, INFINITY

from ._pykernels import NewtonFailure

cnp.import_array()

BACKEND = "cython"


cdef inline int _newton(double B0, double U0, double E0, double rho, double lam, double gamma,
                        double s, double h, double tol, int maxit, double* out) noexcept nogil:
    cdef double b = B0, u = U0, e = E0
    cdef double iu, g, rb, ru, re, a11, a12, a13, a21, a22, a23, a31, a32, a33
    cdef double c1, c2, c3, det, db, du, de, lim, err
    cdef int it
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
        err = fmax(fabs(db) / (1.0 + fabs(b)), fmax(fabs(du) / (1.0 + fabs(u)), fabs(de) / (1.0 + fabs(e))))
        if err <= tol and lim == 1.0:
            out[0] = b
            out[1] = u
            out[2] = e
            return it
    out[0] = err
    return -1


def reaction_step(B, U, E, rho, lam, double gamma, double s, double h, double tol=1e-12, int maxit=50):
    """One backward implicit Euler step of the pointwise coefficient reaction."""
    cdef cnp.ndarray[double, ndim=1] b0 = np.ascontiguousarray(B, dtype=float).ravel()
    cdef Py_ssize_t n = b0.shape[0]
    cdef cnp.ndarray[double, ndim=1] u0 = np.ascontiguousarray(U, dtype=float).ravel()
    cdef cnp.ndarray[double, ndim=1] e0 = np.ascontiguousarray(E, dtype=float).ravel()
    cdef cnp.ndarray[double, ndim=1] r = np.ascontiguousarray(np.broadcast_to(rho, (n,)), dtype=float)
    cdef cnp.ndarray[double, ndim=1] l = np.ascontiguousarray(np.broadcast_to(lam, (n,)), dtype=float)
    cdef cnp.ndarray[double, ndim=1] bo = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] uo = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] eo = np.empty(n)
    cdef double res[3]
    cdef int it, worst = 0
    cdef Py_ssize_t i
    for i in range(n):
        it = _newton(b0[i], u0[i], e0[i], r[i], l[i], gamma, s, h, tol, maxit, res)
        if it < 0:
            raise NewtonFailure(f"reaction Newton did not converge in {maxit} iterations "
                                f"(last update {res[0]:.3e})")
        bo[i] = res[0]
        uo[i] = res[1]
        eo[i] = res[2]
        if it > worst:
            worst = it
    shape = np.shape(B)
    return bo.reshape(shape), uo.reshape(shape), eo.reshape(shape), worst


def tridiag_solve(lower, diag, upper, rhs):
    """Thomas algorithm; ``lower[0]`` and ``upper[-1]`` are ignored, ``rhs`` may be ``(n, k)``."""
    cdef cnp.ndarray[double, ndim=1] a = np.ascontiguousarray(lower, dtype=float)
    cdef cnp.ndarray[double, ndim=1] d = np.ascontiguousarray(diag, dtype=float)
    cdef cnp.ndarray[double, ndim=1] c = np.ascontiguousarray(upper, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    one = rhs.ndim == 1
    cdef cnp.ndarray[double, ndim=2] x = np.array(rhs.reshape(rhs.shape[0], -1), dtype=float, order="C")
    cdef Py_ssize_t n = d.shape[0], k = x.shape[1], i, j
    cdef cnp.ndarray[double, ndim=1] cp = np.empty(n)
    cdef double m
    with nogil:
        m = d[0]
        cp[0] = c[0] / m if n > 1 else 0.0
        for j in range(k):
            x[0, j] /= m
        for i in range(1, n):
            m = d[i] - a[i] * cp[i - 1]
            if i < n - 1:
                cp[i] = c[i] / m
            for j in range(k):
                x[i, j] = (x[i, j] - a[i] * x[i - 1, j]) / m
        for i in range(n - 2, -1, -1):
            for j in range(k):
                x[i, j] -= cp[i] * x[i + 1, j]
    return x[:, 0].copy() if one else x


def state_recurrence(lam_int, kappa, rho, dt, double gamma, double x0):
    """Forward recurrence for the pre-limit state; see the NumPy version."""
    kappa = np.asarray(kappa, dtype=float)
    shape = kappa.shape
    cdef Py_ssize_t n = shape[0]
    cdef cnp.ndarray[double, ndim=2] K = np.ascontiguousarray(kappa.reshape(n, -1))
    cdef cnp.ndarray[double, ndim=2] R = np.ascontiguousarray(np.asarray(rho, dtype=float).reshape(n, -1))
    cdef cnp.ndarray[double, ndim=2] L = np.ascontiguousarray(np.asarray(lam_int, dtype=float).reshape(n - 1, -1))
    cdef cnp.ndarray[double, ndim=1] H = np.ascontiguousarray(dt, dtype=float)
    cdef Py_ssize_t p = K.shape[1], i, j
    cdef cnp.ndarray[double, ndim=2] X = np.empty((n, p))
    cdef cnp.ndarray[double, ndim=2] Z = np.empty((n, p))
    cdef double h, e, k, a, c, b
    with nogil:
        for j in range(p):
            X[0, j] = x0
            Z[0, j] = gamma * x0
            for i in range(n - 1):
                h = H[i]
                e = exp(-L[i, j])
                k = K[i + 1, j] * (1.0 - e)
                a = 1.0 + 0.5 * h * R[i + 1, j]
                c = 0.5 * h * R[i + 1, j] * gamma
                b = Z[i, j] + 0.5 * h * R[i, j] * (gamma * X[i, j] - Z[i, j])
                Z[i + 1, j] = (b + c * X[i, j] * e) / (a - c * k)
                X[i + 1, j] = k * Z[i + 1, j] + X[i, j] * e
    return X.reshape(shape), Z.reshape(shape)


def tracker_recurrence(V, t, double beta, double nu):
    """Saturating tracker driven by ``V`` frozen at the left node of each step."""
    V = np.asarray(V, dtype=float)
    shape = V.shape
    cdef Py_ssize_t n = shape[0]
    cdef cnp.ndarray[double, ndim=2] v = np.ascontiguousarray(V.reshape(n, -1))
    cdef cnp.ndarray[double, ndim=1] tt = np.ascontiguousarray(t, dtype=float)
    cdef Py_ssize_t p = v.shape[1], i, j
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, p))
    cdef double speed = beta / nu, h, d, a, sg, t_hit, rest
    with nogil:
        for j in range(p):
            out[0, j] = 0.0
            for i in range(n - 1):
                h = tt[i + 1] - tt[i]
                d = v[i, j] - out[i, j]
                a = fabs(d)
                sg = 1.0 if d > 0 else (-1.0 if d < 0 else 0.0)
                t_hit = (a - beta) / speed if a > beta else 0.0
                if t_hit >= h:
                    out[i + 1, j] = out[i, j] + sg * speed * h
                else:
                    rest = h - t_hit
                    if a > beta:
                        d = sg * beta
                    out[i + 1, j] = v[i, j] - d * exp(-rest / nu)
    return out.reshape(shape)


cdef inline double _seg_dist(double a, double b, double dt, double dx) noexcept nogil:
    """l-inf distance from (a, b) to the segment from the origin to (dt, dx)."""
    cdef double cand[6]
    cdef double best = fmax(fabs(a), fabs(b)), s, v
    cdef int m = 0, q
    if dt != 0.0:
        cand[m] = a / dt
        m += 1
    if dx != 0.0:
        cand[m] = b / dx
        m += 1
    if dt - dx != 0.0:
        cand[m] = (a - b) / (dt - dx)
        m += 1
    if dt + dx != 0.0:
        cand[m] = (a + b) / (dt + dx)
        m += 1
    cand[m] = 1.0
    m += 1
    for q in range(m):
        s = fmin(1.0, fmax(0.0, cand[q]))
        v = fmax(fabs(a - s * dt), fabs(b - s * dx))
        if v < best:
            best = v
    return best


def directed_linf(points, t, x, double r=0.0):
    """``max_p min_q |p - q|_inf`` from points to the polyline ``(t, x)``, exact.

    ``t`` must be nondecreasing; ``r`` is accepted for signature parity.
    """
    cdef cnp.ndarray[double, ndim=2] P = np.ascontiguousarray(points, dtype=float)
    cdef cnp.ndarray[double, ndim=1] T = np.ascontiguousarray(t, dtype=float)
    cdef cnp.ndarray[double, ndim=1] Xv = np.ascontiguousarray(x, dtype=float)
    cdef Py_ssize_t n = T.shape[0], m = P.shape[0], i, k, k0
    cdef double worst = 0.0, best, pt, px, d
    cdef cnp.ndarray[Py_ssize_t, ndim=1] start = np.clip(
        np.searchsorted(T, P[:, 0], side="right") - 1, 0, max(n - 2, 0)).astype(np.intp)
    if n == 1:
        return float(np.max(np.maximum(np.abs(P[:, 0] - T[0]), np.abs(P[:, 1] - Xv[0]))))
    with nogil:
        for i in range(m):
            pt = P[i, 0]
            px = P[i, 1]
            k0 = start[i]
            best = INFINITY
            k = k0
            while k >= 0:
                if pt - T[k + 1] > best:
                    break
                d = _seg_dist(pt - T[k], px - Xv[k], T[k + 1] - T[k], Xv[k + 1] - Xv[k])
                if d < best:
                    best = d
                k -= 1
            k = k0 + 1
            while k < n - 1:
                if T[k] - pt > best:
                    break
                d = _seg_dist(pt - T[k], px - Xv[k], T[k + 1] - T[k], Xv[k + 1] - Xv[k])
                if d < best:
                    best = d
                k += 1
            if best > worst:
                worst = best
    return float(worst)


cdef enum:
    BLOCK = 32


cdef double _block_scan(double pt, double px, const double[::1] T, const double[::1] Xv, Py_ssize_t n,
                        const double[::1] bmin, const double[::1] bmax, Py_ssize_t blo, Py_ssize_t bhi,
                        double best) noexcept nogil:
    """Exact distance to segments of blocks ``blo..bhi-1`` not ruled out by ``best``."""
    cdef Py_ssize_t j, k, k1
    cdef double d, lb, gap
    for j in range(blo, bhi):
        k = j * BLOCK
        k1 = min(k + BLOCK, n - 1)
        gap = fmax(T[k] - pt, pt - T[k1])
        lb = fmax(fmax(bmin[j] - px, px - bmax[j]), gap)
        if lb >= best:
            continue
        while k < k1:
            d = _seg_dist(pt - T[k], px - Xv[k], T[k + 1] - T[k], Xv[k + 1] - Xv[k])
            if d < best:
                best = d
            k += 1
    return best


cdef double _point_dist(double pt, double px, const double[::1] T, const double[::1] Xv, Py_ssize_t n,
                        const double[::1] bmin, const double[::1] bmax, Py_ssize_t nblk) noexcept nogil:
    """Exact l-inf distance from a point to the polyline (T nondecreasing).

    Blocks of ``BLOCK`` segments are visited outward from the point's time
    and skipped when their time gap or x range already exceeds the best
    distance found.
    """
    cdef Py_ssize_t lo = 0, hi = n - 1, mid, k0, b0, bl, br
    cdef double best
    if n == 1:
        return fmax(fabs(pt - T[0]), fabs(px - Xv[0]))
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if T[mid] <= pt:
            lo = mid
        else:
            hi = mid - 1
    k0 = lo if lo < n - 1 else n - 2
    best = _seg_dist(pt - T[k0], px - Xv[k0], T[k0 + 1] - T[k0], Xv[k0 + 1] - Xv[k0])
    b0 = k0 // BLOCK
    best = _block_scan(pt, px, T, Xv, n, bmin, bmax, b0, b0 + 1, best)
    bl = b0 - 1
    br = b0 + 1
    while bl >= 0 or br < nblk:
        if bl >= 0:
            if pt - T[min((bl + 1) * BLOCK, n - 1)] >= best:
                bl = -1
            else:
                best = _block_scan(pt, px, T, Xv, n, bmin, bmax, bl, bl + 1, best)
                bl -= 1
        if br < nblk:
            if T[br * BLOCK] - pt >= best:
                br = nblk
            else:
                best = _block_scan(pt, px, T, Xv, n, bmin, bmax, br, br + 1, best)
                br += 1
    return best


def _blocks(xb):
    n = xb.size
    nblk = max((n - 1 + BLOCK - 1) // BLOCK, 1)
    bmin = np.empty(nblk)
    bmax = np.empty(nblk)
    for j in range(nblk):
        seg = xb[j * BLOCK:min((j + 1) * BLOCK, n - 1) + 1]
        bmin[j] = seg.min()
        bmax[j] = seg.max()
    return bmin, bmax


def directed_polyline(ta, xa, tb, xb, double r):
    """Directed l-inf distance from polyline A to polyline B, within ``r``.

    Distances at the vertices of A are exact; a segment is sampled at
    spacing ``r`` only when ``(d_i + d_{i+1} + len_i) / 2`` can still beat
    the running maximum.
    """
    cdef const double[::1] TA = np.ascontiguousarray(ta, dtype=float)
    cdef const double[::1] XA = np.ascontiguousarray(xa, dtype=float)
    cdef const double[::1] TB = np.ascontiguousarray(tb, dtype=float)
    xb_arr = np.ascontiguousarray(xb, dtype=float)
    cdef const double[::1] XB = xb_arr
    bmin_arr, bmax_arr = _blocks(xb_arr)
    cdef const double[::1] BMIN = bmin_arr
    cdef const double[::1] BMAX = bmax_arr
    cdef Py_ssize_t nblk = bmin_arr.shape[0]
    cdef Py_ssize_t na = TA.shape[0], nb = TB.shape[0], i, j, m, q
    cdef cnp.ndarray[double, ndim=1] d = np.empty(na)
    cdef double best = 0.0, seg, s
    with nogil:
        for i in range(na):
            d[i] = _point_dist(TA[i], XA[i], TB, XB, nb, BMIN, BMAX, nblk)
            if d[i] > best:
                best = d[i]
    if na < 2:
        return float(best)
    seg_len = np.maximum(np.abs(np.diff(np.asarray(TA))), np.abs(np.diff(np.asarray(XA))))
    ub = 0.5 * (d[:-1] + d[1:] + seg_len)
    cdef cnp.ndarray[Py_ssize_t, ndim=1] order = np.argsort(-ub).astype(np.intp)
    cdef double[::1] UB = ub
    cdef double[::1] SL = seg_len
    with nogil:
        for q in range(na - 1):
            i = order[q]
            if UB[i] <= best + 0.5 * r:
                break
            m = <Py_ssize_t>(SL[i] / r) + 1
            for j in range(1, m):
                s = <double>j / m
                seg = _point_dist(TA[i] + s * (TA[i + 1] - TA[i]), XA[i] + s * (XA[i + 1] - XA[i]),
                                  TB, XB, nb, BMIN, BMAX, nblk)
                if seg > best:
                    best = seg
    return float(best)

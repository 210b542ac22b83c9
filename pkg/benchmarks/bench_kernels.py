"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly, so the environment switch is not
needed.  Results are also checked for agreement.
"""

import argparse
import time

import numpy as np

from smallimpact._kernels import _pykernels as py

try:
    from smallimpact._kernels import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng):
    n, p = 4096, 200
    t = np.linspace(0.0, 1.0, n + 1)
    h = np.diff(t)
    b = rng.uniform(0.5, 1.0, 241)
    u = rng.uniform(1e-3, 1e-1, 241)
    e = rng.uniform(0.0, 0.5, 241)
    rho = rng.uniform(0.1, 1.9, 241)
    yield "reaction_step (241 nodes)", lambda k: k.reaction_step(b, u, e, rho, 1.0, 3.0, 1e-3, 1e-3)
    lower = np.full(241, -0.3)
    upper = np.full(241, -0.3)
    diag = np.full(241, 1.6)
    rhs = rng.normal(size=(241, 3))
    yield "tridiag_solve (241 x 3)", lambda k: k.tridiag_solve(lower, diag, upper, rhs)
    lam_int = rng.uniform(0.0, 5.0, (n, p))
    kappa = rng.uniform(0.2, 0.6, (n + 1, p))
    rr = rng.uniform(0.1, 1.9, (n + 1, p))
    yield "state_recurrence (4097 x 200)", lambda k: k.state_recurrence(lam_int, kappa, rr, h, 3.0, 1.0)
    W = np.cumsum(np.concatenate([[0.0], rng.normal(0, np.sqrt(h))]))
    yield "tracker_recurrence (4097)", lambda k: k.tracker_recurrence(W, t, 0.01, 0.001)
    xa = np.cumsum(rng.normal(0, 0.02, t.size))
    xb = np.cumsum(rng.normal(0, 0.02, t.size))
    yield "directed_polyline (4097 vs 4097)", lambda k: k.directed_polyline(t, xa, t, xb, 1e-4)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}  max diff")
    for name, run in cases(rng):
        tp, op = best_of(lambda: run(py), args.repeat)
        if cy is None:
            print(f"{name:36s} {tp * 1e3:12.3f} {'-':>12s}")
            continue
        tc, oc = best_of(lambda: run(cy), args.repeat)
        a = np.concatenate([np.ravel(np.asarray(x, float)) for x in (op if isinstance(op, tuple) else (op,))])
        c = np.concatenate([np.ravel(np.asarray(x, float)) for x in (oc if isinstance(oc, tuple) else (oc,))])
        print(f"{name:36s} {tp * 1e3:12.3f} {tc * 1e3:12.3f} {tp / tc:8.1f}  {np.max(np.abs(a - c)):.1e}")


if __name__ == "__main__":
    main()

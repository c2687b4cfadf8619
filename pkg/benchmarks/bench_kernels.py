"""Compare the numba kernels with their numpy/scipy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--n 2000] [--repeat 20]

Both backends live in the same process; ``use_numba=False`` picks the
fallback. The first numba call (compilation, or cache load) is excluded.
"""
import argparse
import time

import numpy as np

from impact._accel import HAVE_NUMBA
from impact.numerics import _jacobi_numpy, jacobi_eigh, jacobi_eigh_batch, MAX_SWEEPS
from impact.propagation import Propagator, Scheme, rewrite, spmm, spmm_t
from impact.tsbm import TsbmConfig, make_tsbm


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times) * 1e3


def jacobi_numpy_batch(stack):
    for a in stack:
        _jacobi_numpy(0.5 * (a + a.T), 1e-10, MAX_SWEEPS)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba disabled (IMPACT_NO_NUMBA or missing); both columns use the fallback")

    g, _ = make_tsbm(TsbmConfig(n=args.n), seed=0)
    adj = rewrite(g, Scheme.parse("pmp", "both"))
    prop = Propagator(adj)
    ip, ix, w = prop.indptr, prop.indices, prop.data
    x = np.random.default_rng(0).normal(size=(g.n, 16))

    rng = np.random.default_rng(1)
    b = rng.normal(size=(100, 16, 16))
    stack = b @ b.transpose(0, 2, 1)

    cases = [
        (f"spmm  n={g.n} nnz={adj.nnz} f=16",
         lambda: spmm(ip, ix, w, x, use_numba=True), lambda: spmm(ip, ix, w, x, use_numba=False)),
        (f"spmm_t n={g.n} nnz={adj.nnz} f=16",
         lambda: spmm_t(ip, ix, w, x, g.n, use_numba=True), lambda: spmm_t(ip, ix, w, x, g.n, use_numba=False)),
        ("jacobi 100 x (16x16)",
         lambda: jacobi_eigh_batch(stack), lambda: jacobi_numpy_batch(stack)),
        ("jacobi 1 x (16x16)",
         lambda: jacobi_eigh(stack[0], use_numba=True), lambda: jacobi_eigh(stack[0], use_numba=False)),
    ]
    print(f"{'kernel':38s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fast, slow in cases:
        tf, ts = best_of(fast, args.repeat), best_of(slow, max(3, args.repeat // 4))
        print(f"{name:38s} {tf:10.3f} {ts:10.3f} {ts / tf:8.1f}x")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Benchmark the PLR matvec backends against the dense product.

Builds a compressed oscillatory kernel matrix at a few sizes and times:
the compiled flat-leaf kernel (when built), the pure-NumPy fallback, and
the dense matvec.  Also reports the operation-count ratio, which is what
the complexity identities predict.

Usage: python benchmarks/bench_matvec.py [--sizes 512,1024,2048] [--reps 50]
"""

import argparse
import time

import numpy as np

import cabc.plr as plr
from cabc.analysis import sample_kernel_matrix


def bench(fn, reps):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="512,1024,2048")
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--r-max", type=int, default=8)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    print(f"compiled kernel available: {plr.HAVE_COMPILED_KERNEL}")
    header = f"{'n':>6} {'dense ms':>10} {'plr ms':>10} {'fallback ms':>12} {'wall x':>8} {'op x':>8} {'rel err':>10}"
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for n in sizes:
        k = 0.4 * n
        m = sample_kernel_matrix(k, n, diagonal=1.0 + 1.0j)
        eps = 1e-5 * np.linalg.norm(m, 2)
        h = plr.plr_compress(m, args.r_max, eps, seed=1)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        dense = h.to_dense()

        t_dense = bench(lambda: dense @ x, args.reps)
        t_plr = bench(lambda: plr.plr_matvec(h, x), args.reps)

        flat = h._flatten()
        xp = np.zeros((h.n, 1), dtype=np.complex128)
        xp[: h.n_orig, 0] = x

        def fallback():
            yp = np.zeros((h.n, 1), dtype=np.complex128)
            plr._matvec_python(flat, xp[:, 0], yp[:, 0])
            return yp

        t_fb = bench(fallback, max(5, args.reps // 5))
        rel = np.linalg.norm(plr.plr_matvec(h, x) - dense @ x) / np.linalg.norm(dense @ x)
        op_ratio = 2.0 * n * n / max(plr.matvec_cost(h), 1)
        print(
            f"{n:>6} {1e3 * t_dense:>10.3f} {1e3 * t_plr:>10.3f} {1e3 * t_fb:>12.3f} "
            f"{t_dense / t_plr:>8.1f} {op_ratio:>8.1f} {rel:>10.2e}"
        )


if __name__ == "__main__":
    main()

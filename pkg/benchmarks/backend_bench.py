#!/usr/bin/env python3
"""Benchmark the compiled BCD kernel against the pure-numpy fallback.

Times warm-started group lasso solves of the shapes the EM fitters produce
(residual mode and covariance mode) on both backends and prints a table with
the speedup. Also cross-checks that the two backends return the same
solution.

Usage: python benchmarks/backend_bench.py [--quick]
"""

import argparse
import time

import numpy as np

from nvcssl.group_solver import (
    GramCache,
    GroupProblem,
    available_backends,
    block_majorizers,
    set_backend,
    solve_group_lasso,
)


def make_instance(rng, N, p, d, n_signal=6, weight=8.0):
    U = rng.standard_normal((N, p * d))
    gamma = np.zeros(p * d)
    for k in range(n_signal):
        gamma[k * d:(k + 1) * d] = 3.0 * rng.standard_normal(d)
    y = U @ gamma + rng.standard_normal(N)
    w = np.full(p, weight)
    return U, y, w


def time_solves(backend, U, y, w, d, L, n_solves, gram=False):
    set_backend(backend)
    cache = GramCache(U, d) if gram else None
    gamma = np.zeros(U.shape[1])
    t0 = time.perf_counter()
    for i in range(n_solves):
        # weights drift as an EM loop would drift them
        wi = w * (1.0 + 0.01 * np.sin(i))
        prob = GroupProblem(Y=y, U=U, weights=wi, d=d, warm_start=gamma,
                            tol=1e-7, max_iter=100, majorizers=L, gram=cache,
                            validate=False)
        res = solve_group_lasso(prob)
        gamma = res.gamma
    return time.perf_counter() - t0, gamma


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="smaller shapes, fewer solves")
    args = parser.parse_args()

    if "cython" not in available_backends():
        print("compiled kernel not built; nothing to compare (python fallback only)")
        return

    shapes = [(120, 20, 4, 40), (400, 100, 8, 60)] if args.quick else [
        (120, 20, 4, 200),
        (400, 100, 8, 200),
        (400, 100, 12, 120),
        (800, 50, 8, 200),
    ]
    rng = np.random.default_rng(0)
    print(f"{'N':>5} {'p':>4} {'d':>3} {'mode':>9} {'python':>9} {'cython':>9} {'speedup':>8}")
    for N, p, d, n_solves in shapes:
        U, y, w = make_instance(rng, N, p, d)
        L = block_majorizers(U, d)
        for mode, gram in (("residual", False), ("gram", True)):
            t_py, g_py = time_solves("python", U, y, w, d, L, n_solves, gram)
            t_cy, g_cy = time_solves("cython", U, y, w, d, L, n_solves, gram)
            drift = float(np.max(np.abs(g_py - g_cy)))
            assert drift < 1e-8, f"backend results diverged by {drift}"
            print(f"{N:>5} {p:>4} {d:>3} {mode:>9} {t_py:>8.3f}s {t_cy:>8.3f}s {t_py / t_cy:>7.1f}x")
    set_backend("cython")


if __name__ == "__main__":
    main()

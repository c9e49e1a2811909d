"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--sizes 50,200,400]

Each kernel is compiled once before timing. Results are the median wall time
of ``--repeat`` calls; the last column is numpy time over numba time.
"""
import argparse
import statistics
import time

import numpy as np

from ddgcn import kernels
from ddgcn._backend import NUMBA_AVAILABLE


def median_time(fn, args, repeat):
    fn(*args)
    samples = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def cases(n, rng):
    h = rng.normal(size=(n, 60))
    s = rng.uniform(size=n)
    S = np.outer(s, s)
    scores = -kernels._pairwise_numpy(h)
    return [
        ("matmul", kernels._matmul_numba, kernels._matmul_numpy, (h, h.T.copy())),
        ("pairwise_sq", kernels._pairwise_numba, kernels._pairwise_numpy, (h,)),
        ("knn k=8", kernels._knn_numba, kernels._knn_numpy, (scores, 8)),
        ("power_iter", kernels._power_iteration_numba, kernels._power_iteration_numpy,
         (S, 1000, 1e-10)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--sizes", default="50,200,400")
    args = parser.parse_args(argv)
    if not NUMBA_AVAILABLE:
        parser.exit(1, "numba is not importable; nothing to compare\n")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<12} {'n':>5} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for n in (int(x) for x in args.sizes.split(",")):
        for name, fast, slow, call_args in cases(n, rng):
            t_fast = median_time(fast, call_args, args.repeat)
            t_slow = median_time(slow, call_args, args.repeat)
            print(f"{name:<12} {n:>5} {t_fast * 1e3:>10.3f} {t_slow * 1e3:>10.3f} "
                  f"{t_slow / t_fast:>8.2f}")


if __name__ == "__main__":
    main()

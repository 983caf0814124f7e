"""Benchmark the z-buffer scatter kernel: compiled extension vs numpy fallback.

Run:  python3 benchmarks/bench_warp.py [--sizes 64,256,512] [--repeats 5]

The two implementations must agree exactly; the benchmark asserts that
before timing anything.
"""

import argparse
import time

import numpy as np

from latentflight._kernels import KERNEL_BACKEND, scatter_zbuffer_numpy

try:
    from latentflight._kernels import _scatter_cy

    compiled = _scatter_cy.scatter_zbuffer
except ImportError:
    compiled = None


def make_case(rng, side):
    n = side * side
    tu = rng.integers(-4, side + 4, size=n)
    tv = rng.integers(-4, side + 4, size=n)
    depth = np.round(rng.uniform(0.5, 8.0, size=n), 2)  # plenty of exact ties
    valid = rng.random(n) > 0.05
    src = np.arange(n, dtype=np.int64)
    return tu, tv, depth, valid, src


def time_fn(fn, args, side, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args, side, side)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="64,256,512")
    parser.add_argument("--repeats", type=int, default=5)
    opts = parser.parse_args()
    sizes = [int(s) for s in opts.sizes.split(",")]

    print(f"selected kernel backend at import: {KERNEL_BACKEND}")
    if compiled is None:
        print("compiled extension not built; timing the numpy fallback only")

    header = f"{'side':>6} {'pixels':>10} {'numpy (ms)':>12}"
    if compiled:
        header += f" {'compiled (ms)':>14} {'speedup':>9}"
    print(header)
    rng = np.random.default_rng(0)
    for side in sizes:
        args = make_case(rng, side)
        if compiled is not None:
            a = compiled(*args, side, side)
            b = scatter_zbuffer_numpy(*args, side, side)
            np.testing.assert_array_equal(a, b)
        t_np = time_fn(scatter_zbuffer_numpy, args, side, opts.repeats)
        row = f"{side:>6} {side * side:>10} {t_np * 1e3:>12.3f}"
        if compiled is not None:
            t_cy = time_fn(compiled, args, side, opts.repeats)
            row += f" {t_cy * 1e3:>14.3f} {t_np / t_cy:>8.1f}x"
        print(row)


if __name__ == "__main__":
    main()

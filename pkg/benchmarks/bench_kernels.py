"""Time the compiled and pure-Python SGD kernels on the same inputs.

    python benchmarks/bench_kernels.py [--steps N] [--repeat R]

Prints steps per second for each backend and the speedup, after checking the
two backends return bit-identical records.
"""
import argparse
import time

import numpy as np

from elastlab import kernels
from elastlab.data import make_rng


def cases(steps):
    quad_pairs = (np.array([[1.0, -1.0, 1.0], [1.0, -11.0, 1.0]]), np.array([[1.01, 0.999, 1.2]] * 2))
    relu_pairs = (np.full((1, 10), 10.0), np.full((1, 10), np.sqrt(200.0)))
    record = np.arange(0, steps + 1, 50, dtype=np.int64)
    yield "quad (n=3)", "quad_run", (
        np.sqrt([0.5, 2.0, 4.0]), np.array([1.0, 2.0, 3.0]), make_rng(0, 1).standard_normal((steps, 3)),
        1e-3, *quad_pairs, record, 0.0, 1e6)
    yield "relu (n=10)", "relu_run", (
        make_rng(0, 0).standard_normal(10), np.ones(10), make_rng(0, 1).standard_normal((steps, 10)),
        1e-4, *relu_pairs, record, 0.0, 1e6)


def best_time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=100_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    python = kernels.get_backend("python")
    try:
        compiled = kernels.get_backend("cython")
    except ImportError:
        compiled = None
        print("compiled kernels not built; timing the pure-Python backend only")
    print(f"{'kernel':<12} {'python steps/s':>15} {'cython steps/s':>15} {'speedup':>8}")
    for label, name, call_args in cases(args.steps):
        tp, out_p = best_time(getattr(python, name), call_args, args.repeat)
        row = f"{label:<12} {args.steps / tp:>15.3g}"
        if compiled is not None:
            tc, out_c = best_time(getattr(compiled, name), call_args, args.repeat)
            for a, b in zip(out_p, out_c):
                np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
            row += f" {args.steps / tc:>15.3g} {tp / tc:>7.1f}x"
        print(row)


if __name__ == "__main__":
    main()

"""Times the compiled kernels against the numpy fallback on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best wall time of each backend, the speed
ratio, and whether the two outputs are bit-identical.
"""
import argparse
import timeit

import numpy as np

from assocsip import _fallback

try:
    from assocsip import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    cells = rng.standard_normal((1024, 1024))
    cum = _fallback.prefix_scan(cells)
    lo = rng.integers(0, 512, size=(200_000, 2)).astype(np.int64)
    hi = lo + rng.integers(1, 512, size=(200_000, 2)).astype(np.int64)
    z = rng.standard_normal((514, 514))
    kernel = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0
    z3 = rng.standard_normal((66, 66, 66))
    kernel3 = rng.uniform(size=(3, 3, 3))
    return {
        "prefix_scan 1024^2": (lambda m: m.prefix_scan(cells)),
        "rect_sums 2e5 boxes": (lambda m: m.rect_sums(cum, lo, hi)),
        "ma_filter 512^2 3x3": (lambda m: m.ma_filter(z, kernel)),
        "ma_filter 64^3 3x3x3": (lambda m: m.ma_filter(z3, kernel3)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels are not built; nothing to compare")
        return 1
    print(f"{'kernel':24s} {'cython s':>10s} {'numpy s':>10s} {'speedup':>8s}  identical")
    for name, fn in cases(np.random.default_rng(0)).items():
        fast = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat))
        slow = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat))
        same = np.array_equal(fn(_kernels), fn(_fallback))
        print(f"{name:24s} {fast:10.4f} {slow:10.4f} {slow / fast:8.2f}  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

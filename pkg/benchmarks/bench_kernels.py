"""Compare the compiled MAP kernels with the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--grid 8,16,32] [--m 10,100,1000]
"""
import argparse
import timeit

import numpy as np

from imle import _pykernels

try:
    from imle import _kernels
except ImportError:
    _kernels = None


def _time(fn, arg, repeat, number):
    return min(timeit.repeat(lambda: fn(*arg), repeat=repeat, number=number)) / number


def bench(name, cases, repeat):
    print(f"\n{name}")
    print(f"{'size':>8} {'python (us)':>12} {'cython (us)':>12} {'speedup':>8}")
    for size, args, number in cases:
        py = _time(getattr(_pykernels, name), args, repeat, number)
        if _kernels is None:
            print(f"{size:>8} {py * 1e6:12.1f} {'n/a':>12} {'n/a':>8}")
            continue
        cy = _time(getattr(_kernels, name), args, repeat, number)
        print(f"{size:>8} {py * 1e6:12.1f} {cy * 1e6:12.1f} {py / cy:8.1f}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--grid", default="8,16,32")
    parser.add_argument("--m", default="10,100,1000")
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    if _kernels is None:
        print("compiled extension not built; timing the fallback only")

    grid_cases = []
    for side in (int(x) for x in args.grid.split(",")):
        costs = rng.uniform(0.1, 5.0, size=(side, side))
        grid_cases.append((f"{side}x{side}", (costs,), max(1, 2000 // side**2)))
    bench("dijkstra_grid", grid_cases, args.repeat)

    topk_cases = []
    for m in (int(x) for x in args.m.split(",")):
        theta = rng.standard_normal(m)
        topk_cases.append((str(m), (theta, m // 2), 200))
    bench("topk_mask", topk_cases, args.repeat)


if __name__ == "__main__":
    main()

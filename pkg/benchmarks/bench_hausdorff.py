"""Benchmark the compiled Hausdorff kernel against the numpy fallback.

Times the full pairwise bag-distance matrix (the dominant cost of bag
clustering) over a sweep of bag counts, then prints a table with the
speedup.  Usage:

    python benchmarks/bench_hausdorff.py [--quick]
"""

import argparse
import sys
import time

import numpy as np

from bmiml.hausdorff import _py_pairwise, active_backend, pack_bags, pairwise_distances


def make_bags(rng, n_bags, instances, dim):
    return [rng.normal(size=(instances, dim)) for _ in range(n_bags)]


def time_call(fn, *args, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true", help="smaller sweep")
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--instances", type=int, default=8)
    args = parser.parse_args(argv)

    if active_backend() != "cython":
        print("compiled extension not available; nothing to compare", file=sys.stderr)
        return 1

    sizes = (50, 100, 200) if args.quick else (50, 100, 200, 400, 800)
    rng = np.random.default_rng(0)
    header = f"{'bags':>6}{'pairs':>10}{'cython':>12}{'python':>12}{'speedup':>10}"
    print(f"pairwise Hausdorff, {args.instances} instances/bag, D={args.dim}")
    print(header)
    print("-" * len(header))
    for n in sizes:
        packed, offsets = pack_bags(make_bags(rng, n, args.instances, args.dim))
        t_fast, fast = time_call(pairwise_distances, packed, offsets)
        t_slow, slow = time_call(_py_pairwise, packed, offsets, repeats=1)
        assert np.allclose(fast, slow, rtol=1e-12, atol=1e-14), "backends disagree"
        print(f"{n:>6}{n * (n - 1) // 2:>10}{t_fast:>11.4f}s{t_slow:>11.4f}s{t_slow / t_fast:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Benchmark the exact top-k scan: numba kernels vs the pure-numpy fallback.

Usage: python benchmarks/bench_search.py [--rows N] [--dim D] [--queries Q] [--k K]
"""

import argparse
import time

import numpy as np

from xlingqa import index_kernels
from xlingqa.dense_index import build, search_batch


def time_backend(index, queries, k, flag, repeats=3):
    import os

    os.environ["XLINGQA_NUMBA"] = flag
    try:
        search_batch(index, queries[:1], k)  # warm up (JIT compile / cache touch)
        best = float("inf")
        for _ in range(repeats):
            start = time.perf_counter()
            results = search_batch(index, queries, k)
            best = min(best, time.perf_counter() - start)
        return best, results
    finally:
        os.environ.pop("XLINGQA_NUMBA", None)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=200_000)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--queries", type=int, default=64)
    parser.add_argument("--k", type=int, default=10)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    matrix = rng.standard_normal((args.rows, args.dim)).astype(np.float32)
    ids = [f"p{i:08d}" for i in range(args.rows)]
    index = build(zip(ids, matrix), dim=args.dim)
    queries = [rng.standard_normal(args.dim) for _ in range(args.queries)]

    rows = []
    for label, flag in (("numpy", "0"),) + ((("numba", "1"),) if index_kernels.HAS_NUMBA else ()):
        elapsed, results = time_backend(index, queries, args.k, flag)
        per_query = elapsed / args.queries * 1e3
        throughput = args.rows * args.queries / elapsed / 1e6
        rows.append((label, elapsed, per_query, throughput, results))

    print(f"index: {args.rows} rows x dim {args.dim}, {args.queries} queries, k={args.k}")
    print(f"{'backend':<8} {'total s':>9} {'ms/query':>9} {'Mrow/s':>9}")
    for label, elapsed, per_query, throughput, _ in rows:
        print(f"{label:<8} {elapsed:>9.3f} {per_query:>9.2f} {throughput:>9.1f}")
    if len(rows) == 2:
        speedup = rows[0][1] / rows[1][1]
        same = all(
            [r.passage_id for r in a] == [r.passage_id for r in b]
            for a, b in zip(rows[0][4], rows[1][4]))
        print(f"numba speedup over numpy: {speedup:.2f}x; identical id order: {same}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-NumPy fallbacks.

Covers the two hot paths: batched Levenshtein distance (counterpart
search) and centroid-distance / similarity-matrix math (candidate
ranking).

Usage:
    python benchmarks/bench_kernels.py [--pairs 2000] [--strlen 60]
                                       [--candidates 5000] [--dim 64]

Force the fallback for the whole process instead with:
    CTIKIT_NO_NUMBA=1 python benchmarks/bench_kernels.py
"""

from __future__ import annotations

import argparse
import random
import time

import numpy as np

from ctikit import _kernels


def time_it(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_levenshtein(n_pairs: int, strlen: int):
    rng = random.Random(0)
    alphabet = "abcdefghij "
    pairs = [
        (
            "".join(rng.choice(alphabet) for _ in range(strlen)),
            "".join(rng.choice(alphabet) for _ in range(strlen)),
        )
        for _ in range(n_pairs)
    ]
    encoded = [(_kernels._encode(a), _kernels._encode(b)) for a, b in pairs]

    def run_numpy():
        return [_kernels.levenshtein_numpy(a, b) for a, b in encoded]

    rows = [("levenshtein/numpy", time_it(run_numpy))]
    if _kernels.HAS_NUMBA:
        _kernels._levenshtein_numba(*encoded[0])  # warm the JIT outside timing

        def run_numba():
            return [_kernels._levenshtein_numba(a, b) for a, b in encoded]

        rows.append(("levenshtein/numba", time_it(run_numba)))
        assert run_numba() == run_numpy()
    return rows


def bench_distances(n_candidates: int, dim: int):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(n_candidates, dim))
    c = rng.normal(size=dim)
    B = rng.normal(size=(200, dim))

    rows = [
        ("centroid_distances/numpy", time_it(lambda: _kernels.centroid_distances_numpy(X, c, True))),
        ("cosine_matrix/numpy", time_it(lambda: _kernels.cosine_similarity_matrix_numpy(X[:1000], B))),
    ]
    if _kernels.HAS_NUMBA:
        Xc = np.ascontiguousarray(X)
        cc = np.ascontiguousarray(c)
        _kernels._centroid_distances_numba(Xc[:2], cc, True)  # warm the JIT
        _kernels._cosine_similarity_matrix_numba(Xc[:2], B[:2])
        rows.append(("centroid_distances/numba", time_it(lambda: _kernels._centroid_distances_numba(Xc, cc, True))))
        rows.append(("cosine_matrix/numba", time_it(lambda: _kernels._cosine_similarity_matrix_numba(Xc[:1000], B))))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=2000)
    parser.add_argument("--strlen", type=int, default=60)
    parser.add_argument("--candidates", type=int, default=5000)
    parser.add_argument("--dim", type=int, default=64)
    args = parser.parse_args()

    print(f"active kernel backend: {_kernels.backend_name()}")
    rows = bench_levenshtein(args.pairs, args.strlen) + bench_distances(args.candidates, args.dim)

    width = max(len(name) for name, _ in rows)
    by_kernel: dict[str, dict[str, float]] = {}
    for name, seconds in rows:
        kernel, path = name.rsplit("/", 1)
        by_kernel.setdefault(kernel, {})[path] = seconds
        print(f"{name.ljust(width)}  {seconds * 1000:10.2f} ms")
    for kernel, paths in by_kernel.items():
        if "numba" in paths and "numpy" in paths:
            print(f"{kernel}: numba speedup {paths['numpy'] / paths['numba']:.1f}x")


if __name__ == "__main__":
    main()

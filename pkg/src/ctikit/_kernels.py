"""Hot numeric kernels: Levenshtein distance and embedding-distance math.

Each kernel exists twice: a numba ``@njit`` version and a pure-NumPy
fallback. The fallback is selected when numba is missing or when the
environment variable ``CTIKIT_NO_NUMBA`` is set to ``1``/``true``/``yes``
(useful for debugging and for the benchmark in ``benchmarks/``).

Both paths are exact, not approximations; tests assert equality.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("CTIKIT_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}

if not _DISABLED:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAS_NUMBA = False
else:
    HAS_NUMBA = False


def backend_name() -> str:
    """Which kernel path is active: "numba" or "numpy"."""
    return "numba" if HAS_NUMBA else "numpy"


def _encode(s: str) -> np.ndarray:
    return np.array([ord(c) for c in s], dtype=np.int32)


# ---------------------------------------------------------------------------
# Levenshtein distance
# ---------------------------------------------------------------------------


def _levenshtein_loop(a: np.ndarray, b: np.ndarray) -> int:
    # Two-row dynamic program; a and b are int32 codepoint arrays.
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(n + 1, dtype=np.int64)
    cur = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, m + 1):
        cur[0] = i
        bc = b[i - 1]
        for j in range(1, n + 1):
            sub = prev[j - 1] + (0 if a[j - 1] == bc else 1)
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            best = sub if sub < dele else dele
            cur[j] = best if best < ins else ins
        prev, cur = cur, prev
    return int(prev[n])


def levenshtein_numpy(a: np.ndarray, b: np.ndarray) -> int:
    """Row-vectorized Levenshtein. The insertion recurrence
    cur[j] = min(c[j], cur[j-1]+1) unrolls to j + running_min(c[k]-k),
    which np.minimum.accumulate computes in one pass."""
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return int(m)
    if m == 0:
        return int(n)
    offsets = np.arange(n + 1, dtype=np.int64)
    prev = offsets.copy()
    for i in range(1, m + 1):
        sub = prev[:-1] + (a != b[i - 1])
        dele = prev[1:] + 1
        c = np.concatenate(([i], np.minimum(sub, dele)))
        prev = np.minimum.accumulate(c - offsets) + offsets
    return int(prev[n])


if HAS_NUMBA:
    _levenshtein_numba = njit(cache=True)(_levenshtein_loop)
else:
    _levenshtein_numba = None


def levenshtein_distance(a: str, b: str) -> int:
    """Edit distance (insert/delete/substitute, unit costs) between two strings."""
    if a == b:
        return 0
    ea, eb = _encode(a), _encode(b)
    if HAS_NUMBA:
        return int(_levenshtein_numba(ea, eb))
    return levenshtein_numpy(ea, eb)


# ---------------------------------------------------------------------------
# Embedding distances
# ---------------------------------------------------------------------------


def _centroid_distances_loop(X: np.ndarray, c: np.ndarray, cosine: bool) -> np.ndarray:
    n, d = X.shape
    out = np.empty(n, dtype=np.float64)
    cn = 0.0
    for k in range(d):
        cn += c[k] * c[k]
    cn = np.sqrt(cn)
    for i in range(n):
        if cosine:
            dot = 0.0
            xn = 0.0
            for k in range(d):
                dot += X[i, k] * c[k]
                xn += X[i, k] * X[i, k]
            xn = np.sqrt(xn)
            denom = xn * cn
            if denom == 0.0:
                out[i] = 1.0
            else:
                out[i] = 1.0 - dot / denom
        else:
            acc = 0.0
            for k in range(d):
                diff = X[i, k] - c[k]
                acc += diff * diff
            out[i] = np.sqrt(acc)
    return out


def centroid_distances_numpy(X: np.ndarray, c: np.ndarray, cosine: bool) -> np.ndarray:
    if cosine:
        cn = np.linalg.norm(c)
        xn = np.linalg.norm(X, axis=1)
        denom = xn * cn
        dots = X @ c
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = np.where(denom == 0.0, 0.0, dots / np.where(denom == 0.0, 1.0, denom))
        return 1.0 - sims
    return np.linalg.norm(X - c[None, :], axis=1)


if HAS_NUMBA:
    _centroid_distances_numba = njit(cache=True)(_centroid_distances_loop)
else:
    _centroid_distances_numba = None


def centroid_distances(X: np.ndarray, c: np.ndarray, cosine: bool = True) -> np.ndarray:
    """Distance of each row of X to centroid c (cosine distance or euclidean).

    A zero-norm vector has undefined cosine; it is treated as maximally far
    within [0, 2] at distance 1.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    if HAS_NUMBA:
        return _centroid_distances_numba(X, c, cosine)
    return centroid_distances_numpy(X, c, cosine)


def _cosine_similarity_matrix_loop(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    na, d = A.shape
    nb = B.shape[0]
    out = np.empty((na, nb), dtype=np.float64)
    norm_a = np.empty(na, dtype=np.float64)
    norm_b = np.empty(nb, dtype=np.float64)
    for i in range(na):
        acc = 0.0
        for k in range(d):
            acc += A[i, k] * A[i, k]
        norm_a[i] = np.sqrt(acc)
    for j in range(nb):
        acc = 0.0
        for k in range(d):
            acc += B[j, k] * B[j, k]
        norm_b[j] = np.sqrt(acc)
    for i in range(na):
        for j in range(nb):
            denom = norm_a[i] * norm_b[j]
            if denom == 0.0:
                out[i, j] = 0.0
            else:
                dot = 0.0
                for k in range(d):
                    dot += A[i, k] * B[j, k]
                out[i, j] = dot / denom
    return out


def cosine_similarity_matrix_numpy(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(A, axis=1, keepdims=True)
    nb = np.linalg.norm(B, axis=1, keepdims=True)
    na = np.where(na == 0.0, 1.0, na)
    nb = np.where(nb == 0.0, 1.0, nb)
    zero_a = np.linalg.norm(A, axis=1) == 0.0
    zero_b = np.linalg.norm(B, axis=1) == 0.0
    out = (A / na) @ (B / nb).T
    out[zero_a, :] = 0.0
    out[:, zero_b] = 0.0
    return out


if HAS_NUMBA:
    _cosine_similarity_matrix_numba = njit(cache=True)(_cosine_similarity_matrix_loop)
else:
    _cosine_similarity_matrix_numba = None


def cosine_similarity_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between rows of A and rows of B.

    Always dispatches to the NumPy path: the matmul goes through BLAS,
    which beats the naive njit loop here (see benchmarks/bench_kernels.py).
    The numba variant is kept for the benchmark comparison."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    return cosine_similarity_matrix_numpy(A, B)

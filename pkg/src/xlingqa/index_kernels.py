"""Inner-product scoring kernels for the exact index scan.

The hot loop runs under numba when available; set XLINGQA_NUMBA=0 to force
the pure-numpy fallback. Scores are float32 storage accumulated in float64;
the two backends may disagree in the last couple of ulps (different
accumulation orders), which random data never resolves differently but
exact ties (identical rows) always do, since equal inputs sum equally.
"""

from __future__ import annotations

import os

import numpy as np

_BLOCK_ROWS = 8192

try:
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def use_numba() -> bool:
    if not HAS_NUMBA:
        return False
    return os.environ.get("XLINGQA_NUMBA", "1") != "0"


if HAS_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def _scores_numba(matrix, query):
        n, dim = matrix.shape
        out = np.empty(n, dtype=np.float64)
        for i in prange(n):
            acc = 0.0
            for j in range(dim):
                acc += matrix[i, j] * query[j]
            out[i] = acc
        return out

    @njit(parallel=True, fastmath=True, cache=True)
    def _scores_batch_numba(matrix, queries):
        # rows outer so each matrix row is read once for the whole query block
        n, dim = matrix.shape
        m = queries.shape[0]
        out = np.empty((m, n), dtype=np.float64)
        for i in prange(n):
            for qi in range(m):
                acc = 0.0
                for j in range(dim):
                    acc += matrix[i, j] * queries[qi, j]
                out[qi, i] = acc
        return out


def _scores_numpy(matrix, query):
    n = matrix.shape[0]
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, _BLOCK_ROWS):
        block = matrix[start:start + _BLOCK_ROWS].astype(np.float64)
        out[start:start + _BLOCK_ROWS] = block @ query
    return out


def _scores_batch_numpy(matrix, queries):
    n = matrix.shape[0]
    out = np.empty((queries.shape[0], n), dtype=np.float64)
    for start in range(0, n, _BLOCK_ROWS):
        block = matrix[start:start + _BLOCK_ROWS].astype(np.float64)
        out[:, start:start + _BLOCK_ROWS] = queries @ block.T
    return out


def scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Inner products of every matrix row (float32) with one query, float64."""
    query = np.ascontiguousarray(query, dtype=np.float64)
    if use_numba():
        return _scores_numba(matrix, query)
    return _scores_numpy(matrix, query)


def scores_batch(matrix: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Row scores for a block of queries, shape (n_queries, n_rows)."""
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if use_numba():
        return _scores_batch_numba(matrix, queries)
    return _scores_batch_numpy(matrix, queries)


def top_k(score_vec: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k best scores, ties broken by lexicographically
    smaller id. Exact: gathers every row tied with the k-th score before
    ordering, so boundary ties are never split arbitrarily."""
    n = score_vec.shape[0]
    k_eff = min(k, n)
    if k_eff == 0:
        return np.empty(0, dtype=np.int64)
    if k_eff == n:
        candidates = np.arange(n, dtype=np.int64)
    else:
        part = np.argpartition(-score_vec, k_eff - 1)[:k_eff]
        threshold = score_vec[part].min()
        candidates = np.flatnonzero(score_vec >= threshold)
    # lexsort: last key is primary -> descending score, then ascending id
    order = np.lexsort((ids[candidates], -score_vec[candidates]))
    return candidates[order][:k_eff]

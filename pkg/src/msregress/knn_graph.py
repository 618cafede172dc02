"""Symmetric k-nearest-neighbour graphs by brute-force distance search."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_BLOCK_ELEMENTS = 4_000_000


def default_k(n: int) -> int:
    return max(15, math.ceil(math.log2(max(n, 2))) * 3)


@dataclass(frozen=True)
class KnnGraph:
    """Undirected neighbour graph in CSR layout.

    Row ``i`` owns ``indices[indptr[i]:indptr[i+1]]`` (sorted ascending) and
    the matching Euclidean ``distances``.  ``out_neighbors`` keeps the
    pre-symmetrisation neighbour lists, one row per point.
    """

    k: int
    indptr: np.ndarray
    indices: np.ndarray
    distances: np.ndarray
    out_neighbors: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return list(zip(self.indices[lo:hi].tolist(), self.distances[lo:hi].tolist()))

    def rows(self) -> np.ndarray:
        """Source vertex of every stored (directed) edge."""
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def edges(self) -> np.ndarray:
        """Undirected edge list as an (m, 2) array with i < j, lexicographically sorted."""
        rows = self.rows()
        mask = rows < self.indices
        return np.column_stack([rows[mask], self.indices[mask]])

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges()}

    def components(self) -> np.ndarray:
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import connected_components

        adj = csr_matrix((np.ones_like(self.distances), self.indices, self.indptr), shape=(self.n, self.n))
        _, labels = connected_components(adj, directed=False)
        return labels

    def to_csv(self, path) -> None:
        rows = self.rows()
        mask = rows < self.indices
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "distance"])
            for i, j, d in zip(rows[mask], self.indices[mask], self.distances[mask]):
                w.writerow([int(i), int(j), repr(float(d))])


def _row_neighbors(X, start, stop, k, sq):
    """k nearest neighbours of rows start..stop-1, ties to the lower index."""
    block = X[start:stop]
    d2 = sq[start:stop, None] + sq[None, :] - 2.0 * block @ X.T
    np.maximum(d2, 0.0, out=d2)
    d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
    # Candidate cut is loosened so rounding in the expanded form cannot evict
    # a true neighbour; exact distances then decide.
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
    slack = 1e-9 * (sq[start:stop] + sq.max()) + 1e-12
    out = np.empty((stop - start, k), dtype=np.int64)
    for r in range(stop - start):
        i = start + r
        cand = np.flatnonzero(d2[r] <= kth[r] + slack[r])
        cand = cand[cand != i]
        exact = np.sqrt(((X[cand] - X[i]) ** 2).sum(axis=1))
        order = np.lexsort((cand, exact))
        out[r] = cand[order[:k]]
    return out


def nearest_rows(reference, query) -> np.ndarray:
    """Index of the nearest ``reference`` row for every ``query`` row (lower index on ties)."""
    A = np.ascontiguousarray(reference, dtype=float)
    B = np.ascontiguousarray(query, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"column mismatch: reference {A.shape}, query {B.shape}")
    sqa = (A**2).sum(axis=1)
    sqb = (B**2).sum(axis=1)
    out = np.empty(B.shape[0], dtype=np.int64)
    step = max(1, _BLOCK_ELEMENTS // max(A.shape[0], 1))
    for s in range(0, B.shape[0], step):
        e = min(s + step, B.shape[0])
        d2 = sqb[s:e, None] + sqa[None, :] - 2.0 * B[s:e] @ A.T
        best = d2.min(axis=1)
        slack = 1e-9 * (sqb[s:e] + sqa.max()) + 1e-12
        for r in range(e - s):
            cand = np.flatnonzero(d2[r] <= best[r] + slack[r])
            if len(cand) == 1:
                out[s + r] = cand[0]
                continue
            exact = ((A[cand] - B[s + r]) ** 2).sum(axis=1)
            out[s + r] = cand[np.lexsort((cand, exact))[0]]
    return out


def build_knn(X, k: int) -> KnnGraph:
    """Build the symmetrised k-nearest-neighbour graph of the rows of ``X``.

    Each point links to its ``k`` closest other points (Euclidean, lower
    index wins ties); the union of these directed edges is returned as an
    undirected graph with exact edge lengths.
    """
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two points for a neighbour graph")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    sq = (X**2).sum(axis=1)
    step = max(1, _BLOCK_ELEMENTS // n)
    out = np.vstack([_row_neighbors(X, s, min(s + step, n), k, sq) for s in range(0, n, step)])

    src = np.repeat(np.arange(n), k)
    dst = out.ravel()
    pairs = np.concatenate([np.column_stack([src, dst]), np.column_stack([dst, src])])
    pairs = np.unique(pairs, axis=0)
    rows, cols = pairs[:, 0], pairs[:, 1]
    dist = np.sqrt(((X[rows] - X[cols]) ** 2).sum(axis=1))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return KnnGraph(k, indptr, cols.astype(np.int64), dist, out)

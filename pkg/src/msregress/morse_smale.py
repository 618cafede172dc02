"""Discrete Morse-Smale complex of an outcome sampled on a neighbour graph.

Points flow along the steepest graph edge up (and down) until they reach a
local maximum (minimum).  The pair of terminal extrema labels a *crystal*.
Extrema are then cancelled in order of persistence, which yields a nested
sequence of coarser partitions from which one level is picked for piecewise
model fitting.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .knn_graph import KnnGraph, nearest_rows

logger = logging.getLogger(__name__)

MAX, MIN = "max", "min"


@dataclass(frozen=True)
class GradientFlow:
    """Steepest ascent / descent neighbour of every point.

    A point that is a local maximum has ``ascent[i] == i`` (likewise for
    minima and ``descent``).
    """

    ascent: np.ndarray
    descent: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ascent)

    @property
    def maxima(self) -> np.ndarray:
        return np.flatnonzero(self.ascent == np.arange(self.n))

    @property
    def minima(self) -> np.ndarray:
        return np.flatnonzero(self.descent == np.arange(self.n))


@dataclass(frozen=True)
class Crystal:
    max_point: int
    min_point: int
    members: np.ndarray


@dataclass(frozen=True)
class Merge:
    persistence: float
    kind: str
    cancelled: int
    survivor: int


def _steepest(rows, cols, dist, diff, n):
    """Per-row best neighbour among edges with ``diff > 0``; -1 where none."""
    ok = diff > 0
    rows, cols, dist, diff = rows[ok], cols[ok], dist[ok], diff[ok]
    coincident = dist == 0
    slope = np.where(coincident, diff, diff / np.where(coincident, 1.0, dist))
    # Coincident neighbours outrank any finite slope; ties go to the lower index.
    order = np.lexsort((cols, -slope, ~coincident, rows))
    rows, cols = rows[order], cols[order]
    first = np.ones(len(rows), dtype=bool)
    first[1:] = rows[1:] != rows[:-1]
    best = np.full(n, -1, dtype=np.int64)
    best[rows[first]] = cols[first]
    return best


def steepest_targets(graph: KnnGraph, y) -> GradientFlow:
    """Steepest ascent and descent neighbour of each point.

    The slope to neighbour j is the difference quotient
    ``(y[j] - y[i]) / dist(i, j)``; only strictly higher (lower) neighbours
    qualify, so constant regions are flat and every point there is both a
    maximum and a minimum.
    """
    y = np.asarray(y, dtype=float)
    n = graph.n
    if y.shape != (n,):
        raise ValueError(f"outcome length {y.shape} does not match graph size {n}")
    rows, cols, dist = graph.rows(), graph.indices, graph.distances
    diff = y[cols] - y[rows]
    up = _steepest(rows, cols, dist, diff, n)
    down = _steepest(rows, cols, dist, -diff, n)
    idx = np.arange(n)
    return GradientFlow(np.where(up < 0, idx, up), np.where(down < 0, idx, down))


def _terminal(pointer: np.ndarray) -> np.ndarray:
    """Follow pointers to their fixed points (pointer doubling)."""
    t = pointer.copy()
    while True:
        nxt = t[t]
        if np.array_equal(nxt, t):
            return t
        t = nxt


def terminals(flow: GradientFlow) -> tuple[np.ndarray, np.ndarray]:
    return _terminal(flow.ascent), _terminal(flow.descent)


def _pair_labels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Contiguous labels for distinct (a, b) pairs, numbered by first occurrence."""
    _, first, inv = np.unique(np.column_stack([a, b]), axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    relabel = np.empty(len(first), dtype=np.int64)
    relabel[np.argsort(first, kind="stable")] = np.arange(len(first))
    return relabel[inv]


def build_crystals(flow: GradientFlow) -> list[Crystal]:
    top, bottom = terminals(flow)
    labels = _pair_labels(top, bottom)
    crystals = []
    for c in range(labels.max() + 1):
        members = np.flatnonzero(labels == c)
        i = members[0]
        crystals.append(Crystal(int(top[i]), int(bottom[i]), members))
    return crystals


def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def _sweep(edges, key_vertex, basin_of, rank, y, kind):
    """Elder-rule sweep over basin-crossing edges.

    ``key_vertex`` is the saddle endpoint of each edge (lower endpoint for
    maxima, upper for minima).  Edges are visited from the most to the least
    extreme saddle; when two components meet, the one holding the less
    extreme extremum is cancelled into the other.
    """
    a, b = basin_of[edges[:, 0]], basin_of[edges[:, 1]]
    cross = a != b
    a, b, s = a[cross], b[cross], key_vertex[cross]
    sign = -1 if kind == MAX else 1
    order = np.lexsort((np.minimum(a, b), np.maximum(a, b), sign * rank[s]))
    parent = {int(v): int(v) for v in np.unique(basin_of)}
    merges = []
    for e in order:
        ra, rb = _find(parent, int(a[e])), _find(parent, int(b[e]))
        if ra == rb:
            continue
        if kind == MAX:
            lo, hi = (ra, rb) if rank[ra] < rank[rb] else (rb, ra)
            merges.append(Merge(float(y[lo] - y[s[e]]), MAX, lo, hi))
            parent[lo] = hi
        else:
            lo, hi = (ra, rb) if rank[ra] < rank[rb] else (rb, ra)
            merges.append(Merge(float(y[s[e]] - y[hi]), MIN, hi, lo))
            parent[hi] = lo
    return merges


@dataclass
class MsHierarchy:
    """Persistence simplification of a Morse-Smale complex.

    Level 0 is the unsimplified complex; level ``l`` applies the first
    ``l`` entries of ``merges``.  Labelings are rebuilt on demand from the
    merge list rather than stored for every level.
    """

    y: np.ndarray
    edges: np.ndarray
    max_of: np.ndarray
    min_of: np.ndarray
    merges: list[Merge]
    _count_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_levels(self) -> int:
        return len(self.merges) + 1

    @property
    def base_crystals(self) -> np.ndarray:
        return self.labels_at(0)

    def extrema_at(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= level < self.n_levels:
            raise IndexError(f"level {level} outside [0, {self.n_levels - 1}]")
        n = len(self.y)
        up = np.arange(n)
        down = np.arange(n)
        for m in self.merges[:level]:
            if m.kind == MAX:
                up[m.cancelled] = m.survivor
            else:
                down[m.cancelled] = m.survivor
        return _terminal(up)[self.max_of], _terminal(down)[self.min_of]

    def labels_at(self, level: int) -> np.ndarray:
        return _pair_labels(*self.extrema_at(level))

    def count_at(self, level: int) -> int:
        if level not in self._count_cache:
            self._count_cache[level] = int(self.labels_at(level).max()) + 1
        return self._count_cache[level]

    def to_dict(self) -> dict:
        return {
            "merges": [
                {"persistence": m.persistence, "kind": m.kind, "cancelled": m.cancelled, "survivor": m.survivor}
                for m in self.merges
            ]
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def build_hierarchy(crystals, flow: GradientFlow, graph: KnnGraph, y) -> MsHierarchy:
    """Cancel extrema in order of increasing persistence.

    The persistence of a maximum is its height above the highest boundary
    edge (scored by the lower endpoint) leading into the basin of a higher
    maximum; the basin is absorbed by that neighbour.  Minima are treated
    dually.  Equal heights are ordered by point index.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    max_of, min_of = terminals(flow)
    if crystals is not None:
        covered = np.zeros(n, dtype=bool)
        for c in crystals:
            covered[c.members] = True
        if not covered.all():
            raise ValueError("crystals do not cover every point")
    rank = np.empty(n, dtype=np.int64)
    rank[np.lexsort((np.arange(n), y))] = np.arange(n)
    edges = graph.edges()
    i, j = edges[:, 0], edges[:, 1]
    low = np.where(rank[i] < rank[j], i, j)
    high = np.where(rank[i] < rank[j], j, i)
    merges = _sweep(edges, low, max_of, rank, y, MAX) + _sweep(edges, high, min_of, rank, y, MIN)
    kind_order = {MAX: 0, MIN: 1}
    merges.sort(key=lambda m: (m.persistence, kind_order[m.kind], rank[m.cancelled]))
    return MsHierarchy(y, edges, max_of, min_of, merges)


def morse_smale(graph: KnnGraph, y) -> MsHierarchy:
    flow = steepest_targets(graph, y)
    return build_hierarchy(build_crystals(flow), flow, graph, y)


@dataclass(frozen=True)
class PartitionPolicy:
    """How to pick a level of the hierarchy.

    ``kind`` is ``"count"`` (aim for ``n_partitions``), ``"min_size"``
    (finest level, then merge partitions smaller than ``min_size``) or
    ``"cv"`` (level with lowest k-fold error of per-partition least squares,
    among levels with at most ``max_crystals`` crystals).
    """

    kind: str = "cv"
    n_partitions: int = 1
    min_size: int = 150
    max_crystals: int = 10
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("count", "min_size", "cv"):
            raise ValueError(f"unknown partition policy {self.kind!r}")
        if self.kind == "count" and self.n_partitions < 1:
            raise ValueError("n_partitions must be >= 1")

    def to_dict(self) -> dict:
        return dict(kind=self.kind, n_partitions=self.n_partitions, min_size=self.min_size,
                    max_crystals=self.max_crystals, folds=self.folds, seed=self.seed)


@dataclass(frozen=True)
class Partitioning:
    labels: np.ndarray
    level: int
    warning: str | None = None

    @property
    def n_partitions(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_partitions)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "partition"])
            w.writerows(enumerate(self.labels.tolist()))


def _relabel(labels):
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    relabel = np.empty(len(first), dtype=np.int64)
    relabel[np.argsort(first, kind="stable")] = np.arange(len(first))
    return relabel[inv.ravel()]


def merge_small(labels, edges, min_size: int) -> np.ndarray:
    """Absorb partitions smaller than ``min_size`` into a neighbour.

    The smallest offender joins the adjacent partition it shares the most
    graph edges with; one with no neighbours at all (an isolated graph
    component) joins the largest partition.
    """
    labels = _relabel(np.asarray(labels))
    i, j = edges[:, 0], edges[:, 1]
    while True:
        sizes = np.bincount(labels)
        live = np.flatnonzero(sizes)
        if len(live) <= 1:
            break
        small = live[sizes[live] < min_size]
        if len(small) == 0:
            break
        s = small[np.lexsort((small, sizes[small]))[0]]
        li, lj = labels[i], labels[j]
        across = np.concatenate([lj[(li == s) & (lj != s)], li[(lj == s) & (li != s)]])
        if len(across):
            counts = np.bincount(across, minlength=len(sizes))
            target = int(np.argmax(counts))
        else:
            others = live[live != s]
            target = int(others[np.lexsort((others, -sizes[others]))[0]])
        labels[labels == s] = target
    return _relabel(labels)


def _ols_cv_error(X, y, labels, folds):
    """k-fold MSE of per-partition least squares, held-out rows routed by nearest neighbour."""
    sq = 0.0
    for tr, te, near in folds:
        lab_tr = labels[tr]
        route = lab_tr[near]
        pred = np.full(len(te), y[tr].mean())
        for c in np.unique(lab_tr):
            fit_rows = tr[lab_tr == c]
            A = np.column_stack([np.ones(len(fit_rows)), X[fit_rows]])
            coef = np.linalg.lstsq(A, y[fit_rows], rcond=None)[0]
            hit = route == c
            if hit.any():
                pred[hit] = coef[0] + X[te[hit]] @ coef[1:]
        sq += ((y[te] - pred) ** 2).sum()
    return sq / len(y)


def partition_at(hierarchy: MsHierarchy, policy: PartitionPolicy, X=None) -> Partitioning:
    """Select a partitioning of the training points from ``hierarchy``.

    ``X`` (standardized training features) is needed only by the ``"cv"``
    policy.
    """
    n = len(hierarchy.y)
    last = hierarchy.n_levels - 1
    if policy.kind == "count":
        target = policy.n_partitions
        if target == 1:
            return Partitioning(np.zeros(n, dtype=np.int64), last)
        best_level, best_gap = last, None
        for level in range(last, -1, -1):
            count = hierarchy.count_at(level)
            gap = abs(count - target)
            if best_gap is None or gap < best_gap:
                best_level, best_gap = level, gap
            if count > target:
                break
        labels = hierarchy.labels_at(best_level)
        warning = None
        if best_gap:
            warning = f"requested {target} partitions; nearest attainable is {labels.max() + 1}"
            logger.warning(warning)
        if policy.min_size > 1:
            labels = merge_small(labels, hierarchy.edges, policy.min_size)
        return Partitioning(labels, best_level, warning)

    if policy.kind == "min_size":
        labels = merge_small(hierarchy.labels_at(0), hierarchy.edges, policy.min_size)
        return Partitioning(labels, 0)

    if X is None:
        raise ValueError("the cv partition policy needs the training features")
    X = np.asarray(X, dtype=float)
    y = hierarchy.y
    candidates = []
    seen = set()
    for level in range(last, -1, -1):
        if hierarchy.count_at(level) > policy.max_crystals:
            break
        labels = merge_small(hierarchy.labels_at(level), hierarchy.edges, policy.min_size)
        key = labels.tobytes()
        if key not in seen:
            seen.add(key)
            candidates.append((level, labels))
    if not candidates:
        # Even the coarsest level is too fragmented; fall back to size-merging it.
        candidates.append((last, merge_small(hierarchy.labels_at(last), hierarchy.edges, policy.min_size)))
    k = min(policy.folds, n)
    if len(candidates) == 1 or k < 2:
        level, labels = candidates[0]
        return Partitioning(labels, level)
    fold_of = np.random.default_rng(policy.seed).permutation(n) % k
    folds = []
    for f in range(k):
        tr, te = np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)
        folds.append((tr, te, nearest_rows(X[tr], X[te])))
    scores = [_ols_cv_error(X, y, labels, folds) for _, labels in candidates]
    best = int(np.argmin(scores))
    level, labels = candidates[best]
    return Partitioning(labels, level)


def assign_new(partitioning: Partitioning, train_features, new_features) -> np.ndarray:
    """Label each new row with the partition of its nearest training row."""
    train_features = np.asarray(train_features, dtype=float)
    new_features = np.asarray(new_features, dtype=float)
    if new_features.ndim != 2 or new_features.shape[1] != train_features.shape[1]:
        raise ValueError(
            f"expected {train_features.shape[1]} columns, got shape {new_features.shape}"
        )
    return partitioning.labels[nearest_rows(train_features, new_features)]

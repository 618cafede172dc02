"""Regression trees: conditional inference trees and random forests.

Both tree types share one flat node layout (``Tree``) and one routing
kernel.  A node with ``feature == -1`` is a leaf; otherwise rows with
``x[feature] <= threshold`` go left.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy import stats

LEAF = -1


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    n_features: int
    params: dict = field(default_factory=dict)
    p_value: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())

    def used_features(self) -> np.ndarray:
        return np.unique(self.feature[self.feature != LEAF])

    def apply(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        return _route(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def splits(self) -> list[dict]:
        """Internal nodes as plain records, root first."""
        out = []
        for i in np.flatnonzero(self.feature != LEAF):
            rec = {"node": int(i), "feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                   "n": int(self.count[i])}
            if self.p_value is not None:
                rec["p_value"] = float(self.p_value[i])
            out.append(rec)
        return out

    def to_dict(self) -> dict:
        d = {"type": "tree", "feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
             "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist(),
             "count": self.count.tolist(), "n_features": self.n_features, "params": self.params}
        if self.p_value is not None:
            d["p_value"] = self.p_value.tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "Tree":
        pv = d.get("p_value")
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["value"], float), np.asarray(d["count"], np.int64), d["n_features"],
                   d.get("params", {}), None if pv is None else np.asarray(pv, float))


def _check_X(X, p):
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != p:
        raise ValueError(f"expected {p} columns, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("non-finite feature values")
    return X


@njit(cache=True)
def _route(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def _best_split(xs, ys, min_leaf):
    """Best SSE split of one feature; returns (score, threshold), score=-inf if none.

    ``score`` is sum_L^2/n_L + sum_R^2/n_R, which is maximal where the
    child-weighted squared error is minimal.  Ties keep the lower threshold.
    """
    order = np.argsort(xs, kind="mergesort")
    n = len(xs)
    total = 0.0
    for i in range(n):
        total += ys[i]
    best = -np.inf
    thr = 0.0
    s = 0.0
    for i in range(1, n):
        s += ys[order[i - 1]]
        lo = xs[order[i - 1]]
        hi = xs[order[i]]
        if i < min_leaf or n - i < min_leaf or not lo < hi:
            continue
        score = s * s / i + (total - s) * (total - s) / (n - i)
        if score > best:
            best = score
            mid = 0.5 * (lo + hi)
            thr = mid if mid < hi else lo
    return best, thr


@njit(cache=True)
def _grow(X, y, sample, mtry, min_node, seed):
    """Grow a CART regression tree on rows ``sample`` (duplicates allowed)."""
    np.random.seed(seed)
    n, p = X.shape[0], X.shape[1]
    m = len(sample)
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)
    idx = sample.copy()
    buf = np.empty(m, dtype=np.int64)
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    perm = np.arange(p)
    n_nodes = 1
    top = 0
    stack_node[0], stack_lo[0], stack_hi[0] = 0, 0, m
    top = 1
    while top > 0:
        top -= 1
        node, lo, hi = stack_node[top], stack_lo[top], stack_hi[top]
        size = hi - lo
        ys = np.empty(size)
        for i in range(size):
            ys[i] = y[idx[lo + i]]
        value[node] = ys.mean()
        count[node] = size
        if size <= min_node:
            continue
        # draw mtry features (partial Fisher-Yates), then scan in index order
        for i in range(mtry):
            r = i + np.random.randint(p - i)
            perm[i], perm[r] = perm[r], perm[i]
        cand = np.sort(perm[:mtry].copy())
        best, best_f, best_t = -np.inf, -1, 0.0
        xs = np.empty(size)
        for f in cand:
            for i in range(size):
                xs[i] = X[idx[lo + i], f]
            score, t = _best_split(xs, ys, 1)
            if score > best:
                best, best_f, best_t = score, f, t
        if best_f < 0:
            continue
        nl = 0
        nr = 0
        for i in range(lo, hi):
            r = idx[i]
            if X[r, best_f] <= best_t:
                idx[lo + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for i in range(nr):
            idx[lo + nl + i] = buf[i]
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top], stack_lo[top], stack_hi[top] = n_nodes + 1, lo + nl, hi
        top += 1
        stack_node[top], stack_lo[top], stack_hi[top] = n_nodes, lo, lo + nl
        top += 1
        n_nodes += 2
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], count[:n_nodes])


def grow_tree(X, y, sample=None, mtry=None, min_node: int = 5, seed: int = 0) -> Tree:
    """Plain CART tree: nodes with more than ``min_node`` rows are split."""
    X = _check_X(X, np.shape(X)[1])
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    mtry = p if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must lie in [1, {p}]")
    sample = np.arange(len(y), dtype=np.int64) if sample is None else np.asarray(sample, dtype=np.int64)
    parts = _grow(X, y, sample, mtry, int(min_node), int(seed) & 0x7FFFFFFF)
    return Tree(*parts, n_features=p, params={"mtry": mtry, "min_node": int(min_node)})


def _ctree_test(X, y):
    """Bonferroni-adjusted p-values of the Pearson correlation t-test per column."""
    n = len(y)
    if n < 3:
        return np.ones(X.shape[1])
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt((Xc**2).sum(axis=0))
    sy = np.sqrt(yc @ yc)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (Xc.T @ yc) / (sx * sy)
        r = np.clip(r, -1.0, 1.0)
        t = np.abs(r) * np.sqrt(n - 2) / np.sqrt(1.0 - r**2)
    p = 2.0 * stats.t.sf(t, df=n - 2)
    p = np.where(np.isfinite(r), p, 1.0)
    p = np.where(np.isnan(p), 0.0, p)
    return np.minimum(1.0, p * X.shape[1])


def fit_ctree(X, y, alpha: float = 0.05, min_node: int = 7) -> Tree:
    """Conditional inference tree with correlation-test gated splits.

    At each node every column is tested for association with the outcome
    (Pearson correlation t-test, Bonferroni-adjusted over columns).  The
    node becomes a leaf when no adjusted p-value reaches ``alpha`` or when
    it holds fewer than ``2 * min_node`` rows; otherwise the most
    significant column is split at the midpoint minimizing child squared
    error, with at least ``min_node`` rows on each side.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    X = _check_X(X, np.shape(X)[1])
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise ValueError("X and y lengths differ")
    feature, threshold, left, right, value, count, pvals = [], [], [], [], [], [], []

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        count.append(len(rows))
        pvals.append(1.0)
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)))]
    while stack:
        node, rows = stack.pop()
        if len(rows) < 2 * min_node:
            continue
        padj = _ctree_test(X[rows], y[rows])
        j = int(np.argmin(padj))
        pvals[node] = float(padj[j])
        if padj[j] > alpha:
            continue
        score, thr = _best_split(X[rows, j].copy(), y[rows].copy(), min_node)
        if not np.isfinite(score):
            continue
        go_left = X[rows, j] <= thr
        feature[node], threshold[node] = j, float(thr)
        lrows, rrows = rows[go_left], rows[~go_left]
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows))
        stack.append((left[node], lrows))
    return Tree(np.array(feature, np.int64), np.array(threshold), np.array(left, np.int64),
                np.array(right, np.int64), np.array(value), np.array(count, np.int64), X.shape[1],
                {"alpha": alpha, "min_node": min_node}, np.array(pvals))


def default_mtry(p: int) -> int:
    return max(1, round(p / 3))


@dataclass(frozen=True)
class Forest:
    trees: list
    oob: list
    mtry: int
    n_features: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict(self, X) -> np.ndarray:
        return predict_tree(self, X)

    def to_dict(self) -> dict:
        return {"type": "forest", "mtry": self.mtry, "n_features": self.n_features,
                "trees": [t.to_dict() for t in self.trees], "oob": [o.tolist() for o in self.oob]}

    @classmethod
    def from_dict(cls, d) -> "Forest":
        return cls([Tree.from_dict(t) for t in d["trees"]], [np.asarray(o, np.int64) for o in d["oob"]],
                   d["mtry"], d["n_features"])


def _tree_seeds(seed: int, t: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence([int(seed), int(t)]).generate_state(2)
    return int(a), int(b) & 0x7FFFFFFF


def fit_random_forest(X, y, n_trees: int = 500, mtry: int | None = None, min_node: int = 5,
                      seed: int = 0, bootstrap: bool = True) -> Forest:
    """Random forest of CART trees on bootstrap samples.

    Tree ``t`` draws its bootstrap rows and its per-split feature subsets
    from streams seeded by ``(seed, t)``, so forests are reproducible
    irrespective of the order trees are grown in.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    X = _check_X(X, np.shape(X)[1])
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    mtry = default_mtry(p) if mtry is None else int(mtry)
    trees, oob = [], []
    for t in range(n_trees):
        boot_seed, grow_seed = _tree_seeds(seed, t)
        if bootstrap:
            sample = np.random.default_rng(boot_seed).integers(0, n, size=n)
        else:
            sample = np.arange(n)
        inbag = np.zeros(n, dtype=bool)
        inbag[sample] = True
        trees.append(grow_tree(X, y, sample, mtry, min_node, grow_seed))
        oob.append(np.flatnonzero(~inbag))
    return Forest(trees, oob, mtry, p)


def predict_tree(model, X) -> np.ndarray:
    if isinstance(model, Tree):
        return model.predict(X)
    X = _check_X(X, model.n_features)
    total = np.zeros(X.shape[0])
    for tree in model.trees:
        total += tree.value[_route(X, tree.feature, tree.threshold, tree.left, tree.right)]
    return total / model.n_trees


@dataclass(frozen=True)
class ImportanceReport:
    feature_names: tuple
    importance: np.ndarray
    rank: np.ndarray

    def to_rows(self) -> list[dict]:
        return [{"feature": f, "importance": float(v), "rank": int(r)}
                for f, v, r in zip(self.feature_names, self.importance, self.rank)]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, ["feature", "importance", "rank"], lineterminator="\n")
            w.writeheader()
            w.writerows(self.to_rows())


def rank_descending(values) -> np.ndarray:
    values = np.asarray(values)
    order = np.lexsort((np.arange(len(values)), -values))
    rank = np.empty(len(values), dtype=np.int64)
    rank[order] = np.arange(1, len(values) + 1)
    return rank


def permutation_importance(forest: Forest, X, y, seed: int = 0, feature_names=None) -> ImportanceReport:
    """Out-of-bag permutation importance.

    For each tree, the OOB squared error with column j shuffled among the
    OOB rows minus the unshuffled OOB error, averaged over trees.
    """
    X = _check_X(X, forest.n_features)
    y = np.asarray(y, dtype=float)
    p = forest.n_features
    rng = np.random.default_rng(seed)
    total = np.zeros(p)
    used = 0
    for tree, oob in zip(forest.trees, forest.oob):
        if len(oob) == 0:
            continue
        used += 1
        Xo = X[oob]
        base = ((tree.value[_route(Xo, tree.feature, tree.threshold, tree.left, tree.right)] - y[oob]) ** 2).mean()
        for j in range(p):
            perm = rng.permutation(len(oob))
            col = Xo[:, j].copy()
            Xo[:, j] = col[perm]
            err = ((tree.value[_route(Xo, tree.feature, tree.threshold, tree.left, tree.right)] - y[oob]) ** 2).mean()
            Xo[:, j] = col
            total[j] += err - base
    if used == 0:
        raise ValueError("no tree has out-of-bag rows; importance is undefined")
    imp = total / used
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j + 1}" for j in range(p))
    return ImportanceReport(names, imp, rank_descending(imp))


def tree_from_dict(d):
    return Forest.from_dict(d) if d["type"] == "forest" else Tree.from_dict(d)

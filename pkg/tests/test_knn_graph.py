"""Tests for the symmetrised k-nearest-neighbour graph."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msregress.knn_graph import build_knn, default_k, nearest_rows


def brute_out_neighbors(X, k):
    """Sort the full distance matrix row by row, lower index first on ties."""
    n = len(X)
    out = []
    for i in range(n):
        d = [(float(np.sqrt(((X[i] - X[j]) ** 2).sum())), j) for j in range(n) if j != i]
        d.sort()
        out.append([j for _, j in d[:k]])
    return out


def brute_edges(X, k):
    edges = set()
    for i, nb in enumerate(brute_out_neighbors(X, k)):
        for j in nb:
            edges.add((min(i, j), max(i, j)))
    return edges


def test_two_points():
    g = build_knn(np.array([[0.0], [1.0]]), 1)
    assert g.edge_set() == {(0, 1)}
    assert g.neighbors(0) == [(1, 1.0)]
    assert g.neighbors(1) == [(0, 1.0)]


def test_three_points_hand_table():
    g = build_knn(np.array([0.0, 1.0, 3.0]), 1)
    assert g.out_neighbors[:, 0].tolist() == [1, 0, 1]
    assert g.edge_set() == {(0, 1), (1, 2)}
    assert dict(g.neighbors(1)) == {0: 1.0, 2: 2.0}


def test_matches_full_distance_sort(rng):
    X = rng.normal(size=(50, 3))
    g = build_knn(X, 5)
    assert g.edge_set() == brute_edges(X, 5)
    assert g.out_neighbors.tolist() == brute_out_neighbors(X, 5)


def test_ties_go_to_lower_index():
    # point 1 is equidistant from 0 and 2
    g = build_knn(np.array([[0.0], [1.0], [2.0]]), 1)
    assert g.out_neighbors[1, 0] == 0


def test_symmetric_with_equal_distances(rng):
    g = build_knn(rng.normal(size=(80, 4)), 6)
    for i in range(g.n):
        for j, d in g.neighbors(i):
            assert i != j
            assert dict(g.neighbors(j))[i] == d


def test_out_degree(rng):
    g = build_knn(rng.normal(size=(30, 2)), 4)
    assert g.out_neighbors.shape == (30, 4)
    assert (np.diff(g.indptr) >= 4).all()


def test_coincident_points_get_zero_edges():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    g = build_knn(X, 1)
    assert dict(g.neighbors(0))[1] == 0.0


def test_distances_exact(rng):
    X = rng.normal(size=(40, 3)) * 1e3
    g = build_knn(X, 4)
    for i, j in g.edges():
        d = dict(g.neighbors(int(i)))[int(j)]
        assert d == pytest.approx(np.linalg.norm(X[i] - X[j]), rel=1e-14)


@pytest.mark.parametrize("k", [0, 10])
def test_bad_k(k):
    with pytest.raises(ValueError):
        build_knn(np.zeros((10, 1)) + np.arange(10)[:, None], k)


def test_default_k():
    assert default_k(100) == 21
    assert default_k(10) == 15
    assert default_k(10_000) == 42
    assert default_k(2000) == 33


def test_components_of_separated_clusters():
    X = np.vstack([np.arange(5.0)[:, None], 100 + np.arange(5.0)[:, None]])
    labels = build_knn(X, 2).components()
    assert len(set(labels[:5])) == 1 and len(set(labels[5:])) == 1
    assert labels[0] != labels[5]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(10, 40), st.integers(1, 5))
def test_monotone_in_k(seed, n, k):
    X = np.random.default_rng(seed).normal(size=(n, 3))
    assert build_knn(X, k).edge_set() <= build_knn(X, k + 1).edge_set()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.5, 2.0, 8.0]))
def test_scale_keeps_topology(seed, c):
    X = np.random.default_rng(seed).normal(size=(25, 2))
    a, b = build_knn(X, 3), build_knn(c * X, 3)
    assert a.edge_set() == b.edge_set()
    assert np.allclose(b.distances, c * a.distances, rtol=1e-12)


def test_nearest_rows_matches_scan(rng):
    A = rng.normal(size=(60, 3))
    B = rng.normal(size=(100, 3))
    got = nearest_rows(A, B)
    want = [int(np.argmin(((A - b) ** 2).sum(axis=1))) for b in B]
    assert got.tolist() == want


def test_nearest_rows_tie_lower_index():
    A = np.array([[1.0], [-1.0]])
    assert nearest_rows(A, np.array([[0.0]])).tolist() == [0]

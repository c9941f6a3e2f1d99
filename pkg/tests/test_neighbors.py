import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthfuse.neighbors import KdTree, NeighborTable, brute_force_knn, precompute_table, query_knn, build


def test_collinear_example():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [10, 0, 0.0]])
    np.testing.assert_array_equal(query_knn(build(pts), [0.9, 0, 0], 2), [1, 0])


def test_k_equal_n_returns_everything_sorted():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((7, 3))
    q = rng.standard_normal(3)
    got = KdTree(pts).query(q, 7)
    d = np.sum((pts - q) ** 2, axis=1)
    assert sorted(got) == list(range(7))
    assert np.all(np.diff(d[got]) >= 0)


def test_k_larger_than_n_is_an_error():
    with pytest.raises(ValueError):
        KdTree(np.zeros((3, 3))).query(np.zeros(3), 4)
    with pytest.raises(ValueError):
        precompute_table(np.zeros((3, 3)), 4)


def test_duplicates_break_ties_by_index():
    pts = np.array([[1, 1, 1]] * 5 + [[0, 0, 0.0]])
    np.testing.assert_array_equal(KdTree(pts, leaf_size=2).query([1, 1, 1], 3), [0, 1, 2])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 200), grid=st.booleans())
def test_tree_equals_brute_force(seed, n, grid):
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, 4, size=(n, 3)).astype(float) if grid else rng.uniform(-5, 5, (n, 3))
    tree = KdTree(pts, leaf_size=int(rng.integers(1, 9)))
    for _ in range(5):
        q = rng.integers(0, 4, 3).astype(float) if grid else rng.uniform(-6, 6, 3)
        k = int(rng.integers(1, n + 1))
        np.testing.assert_array_equal(tree.query(q, k), brute_force_knn(pts, q, k))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 80))
def test_table_rows_start_with_self_and_are_monotone(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 3, (n, 3))
    k = min(n, 5)
    table = precompute_table(pts, k)
    np.testing.assert_array_equal(table.indices[:, 0], np.arange(n))
    d = np.linalg.norm(table.offsets, axis=2)
    assert np.all(np.diff(d, axis=1) >= 0)
    np.testing.assert_allclose(table.offsets, pts[:, None] - pts[table.indices])


def test_table_with_duplicate_points_keeps_self_first():
    pts = np.zeros((4, 3))
    pts[:, 2] = 1.0
    table = precompute_table(pts, 3)
    np.testing.assert_array_equal(table.indices, [[0, 1, 2], [1, 0, 2], [2, 0, 1], [3, 0, 1]])


def test_permuted_table_matches_recomputed():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 1, (30, 3))
    perm = rng.permutation(30)
    a = precompute_table(pts, 4).permuted(perm)
    b = precompute_table(pts[perm], 4)
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_allclose(a.offsets, b.offsets)


def test_concatenate_offsets_indices():
    t = precompute_table(np.eye(3) + 1, 2)
    both = NeighborTable.concatenate([t, t])
    assert both.n == 6
    np.testing.assert_array_equal(both.indices[3:], t.indices + 3)

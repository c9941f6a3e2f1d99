"""Exact K-nearest-neighbor search over 3-D points.

Distances are compared as squared Euclidean distances evaluated with one fixed
expression, ``(dx*dx + dy*dy) + dz*dz``, in both the tree and the brute-force
scan, so the two paths agree bit for bit. Ties go to the smaller point index.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .geometry import PointSet

DEFAULT_K = 9


def _coords(points) -> np.ndarray:
    c = points.coords if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 3:
        raise ValueError(f"points must be N x 3, got {c.shape}")
    return c


def _check_k(k: int, n: int) -> None:
    if k < 1:
        raise ValueError(f"K must be at least 1, got {k}")
    if k > n:
        raise ValueError(f"K={k} exceeds the number of points N={n}")


def squared_distances(coords: np.ndarray, q) -> np.ndarray:
    dx = coords[:, 0] - q[0]
    dy = coords[:, 1] - q[1]
    dz = coords[:, 2] - q[2]
    return (dx * dx + dy * dy) + dz * dz


def brute_force_knn(points, q, k: int) -> np.ndarray:
    """Exhaustive scan; the verification oracle for :class:`KdTree`."""
    coords = _coords(points)
    _check_k(k, len(coords))
    d2 = squared_distances(coords, np.asarray(q, dtype=np.float64))
    order = np.lexsort((np.arange(len(coords)), d2))
    return order[:k]


class KdTree:
    """Balanced KD-tree: split on the widest axis at the median, small leaf buckets.

    Node arrays: ``axis`` (-1 for leaves), ``split``, ``left``/``right`` child ids,
    and ``start``/``stop`` ranges into ``perm`` for leaves.
    """

    def __init__(self, points, leaf_size: int = 8):
        coords = _coords(points)
        if len(coords) < 1:
            raise ValueError("cannot build a KD-tree over zero points")
        if not np.all(np.isfinite(coords)):
            raise ValueError("KD-tree input contains non-finite coordinates")
        if leaf_size < 1:
            raise ValueError("leaf_size must be positive")
        self.coords = coords
        self.n = len(coords)
        self.leaf_size = leaf_size
        self.perm = np.arange(self.n)
        self._axis: list[int] = []
        self._split: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._start: list[int] = []
        self._stop: list[int] = []
        self._build()
        # Per-leaf python lists keep the query loop free of numpy call overhead.
        pc = self.coords[self.perm]
        self._pts = list(zip(pc[:, 0].tolist(), pc[:, 1].tolist(), pc[:, 2].tolist(), self.perm.tolist()))

    def _new_node(self) -> int:
        for lst in (self._axis, self._split, self._left, self._right, self._start, self._stop):
            lst.append(-1)
        return len(self._axis) - 1

    def _build(self) -> None:
        root = self._new_node()
        stack = [(root, 0, self.n)]
        while stack:
            node, lo, hi = stack.pop()
            if hi - lo <= self.leaf_size:
                self._start[node], self._stop[node] = lo, hi
                continue
            idx = self.perm[lo:hi]
            sub = self.coords[idx]
            axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
            mid = (hi - lo) // 2
            part = np.argpartition(sub[:, axis], mid, kind="introselect")
            self.perm[lo:hi] = idx[part]
            split = float(self.coords[self.perm[lo + mid], axis])
            left, right = self._new_node(), self._new_node()
            self._axis[node], self._split[node] = axis, split
            self._left[node], self._right[node] = left, right
            stack.append((right, lo + mid, hi))
            stack.append((left, lo, lo + mid))

    @property
    def num_nodes(self) -> int:
        return len(self._axis)

    def leaves(self):
        """``(start, stop)`` ranges of every leaf, in node order."""
        return [(s, e) for a, s, e in zip(self._axis, self._start, self._stop) if a == -1]

    def query(self, q, k: int) -> np.ndarray:
        """Indices of the ``k`` nearest points, nearest first, ties by index."""
        _check_k(k, self.n)
        qx, qy, qz = (float(v) for v in q)
        axis_l, split_l, left_l, right_l = self._axis, self._split, self._left, self._right
        start_l, stop_l, pts = self._start, self._stop, self._pts
        # Max-heap of the current best via negated keys: (-d2, -index).
        heap: list[tuple[float, int]] = []
        stack: list[tuple[float, int]] = [(0.0, 0)]
        while stack:
            bound, node = stack.pop()
            if len(heap) == k and bound > -heap[0][0]:
                continue
            axis = axis_l[node]
            while axis != -1:
                diff = (qx, qy, qz)[axis] - split_l[node]
                if diff < 0:
                    near, far = left_l[node], right_l[node]
                else:
                    near, far = right_l[node], left_l[node]
                stack.append((diff * diff, far))
                node = near
                axis = axis_l[node]
            for i in range(start_l[node], stop_l[node]):
                px, py, pz, idx = pts[i]
                dx = px - qx
                dy = py - qy
                dz = pz - qz
                d2 = (dx * dx + dy * dy) + dz * dz
                if len(heap) < k:
                    heapq.heappush(heap, (-d2, -idx))
                else:
                    wd, wi = heap[0]
                    if d2 < -wd or (d2 == -wd and idx < -wi):
                        heapq.heapreplace(heap, (-d2, -idx))
        best = sorted((-d, -i) for d, i in heap)
        return np.array([i for _, i in best], dtype=np.int64)


def build(points) -> KdTree:
    return KdTree(points)


def query_knn(tree: KdTree, q, k: int) -> np.ndarray:
    return tree.query(q, k)


@dataclass
class NeighborTable:
    """Per-point neighbor indices ``[N, K]`` and offsets ``x_i - x_k`` ``[N, K, 3]``."""

    indices: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        n, k = self.indices.shape
        if self.offsets.shape != (n, k, 3):
            raise ValueError(f"offsets shape {self.offsets.shape} does not match indices {self.indices.shape}")

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def permuted(self, perm: np.ndarray) -> "NeighborTable":
        """Table for points reordered so that new point ``j`` is old point ``perm[j]``."""
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        return NeighborTable(inverse[self.indices[perm]], self.offsets[perm])

    @staticmethod
    def concatenate(tables) -> "NeighborTable":
        """Stack per-frame tables into one, offsetting indices frame by frame."""
        shift = 0
        idx, off = [], []
        for t in tables:
            idx.append(t.indices + shift)
            off.append(t.offsets)
            shift += t.n
        return NeighborTable(np.concatenate(idx), np.concatenate(off))


def precompute_table(points, k: int = DEFAULT_K, tree: KdTree | None = None) -> NeighborTable:
    """Neighbor table for every point; computed once per frame and shared by all blocks.

    Each row starts with the point itself; the remaining ``k - 1`` entries are the
    nearest other points by distance, ties by index.
    """
    coords = _coords(points)
    n = len(coords)
    _check_k(k, n)
    tree = tree if tree is not None else KdTree(coords)
    indices = np.empty((n, k), dtype=np.int64)
    indices[:, 0] = np.arange(n)
    if k > 1:
        extra = min(k + 1, n)
        for i in range(n):
            row = tree.query(coords[i], extra)
            row = row[row != i][: k - 1]
            indices[i, 1:] = row
    offsets = coords[:, None, :] - coords[indices]
    return NeighborTable(indices, offsets)

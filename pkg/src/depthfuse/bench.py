"""Timing harness for the KNN, continuous-convolution and fuse-block kernels."""
from __future__ import annotations

import statistics
import time

import numpy as np

from .contconv import ContConvLayer
from .fusenet import BRANCHES, BatchGeometry, FrameGeometry, FuseBlock
from .geometry import PointSet
from .ndcore import ops
from .ndcore.tensor import Parameter
from .neighbors import KdTree, brute_force_knn, precompute_table


def _timeit(fn, repeats: int) -> dict:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return {"min_s": min(times), "median_s": statistics.median(times), "repeats": repeats}


def random_points(n: int, rng) -> np.ndarray:
    """Points roughly like a LiDAR sweep: spread in x, near a ground height, 2-60 m ahead."""
    return np.stack([rng.uniform(-20, 20, n), rng.uniform(-2, 2, n), rng.uniform(2, 60, n)], axis=1)


def bench_knn(n_points: int, k: int, n_queries: int, repeats: int, rng) -> dict:
    pts = random_points(n_points, rng)
    queries = pts[rng.choice(n_points, size=min(n_queries, n_points), replace=False)]
    tree = KdTree(pts)
    build = _timeit(lambda: KdTree(pts), repeats)
    tree_q = _timeit(lambda: [tree.query(q, k) for q in queries], repeats)
    brute_q = _timeit(lambda: [brute_force_knn(pts, q, k) for q in queries], repeats)
    nq = len(queries)
    return {
        "points": n_points, "k": k, "queries": nq,
        "build": build,
        "tree_query": tree_q, "tree_queries_per_s": nq / tree_q["median_s"],
        "brute_query": brute_q, "brute_queries_per_s": nq / brute_q["median_s"],
    }


def bench_contconv(n_points: int, c: int, k: int, repeats: int, rng) -> dict:
    pts = random_points(n_points, rng)
    table = precompute_table(pts, k)
    layer = ContConvLayer(c, c, rng=rng)
    f = Parameter(rng.standard_normal((n_points, c)).astype(np.float32))

    def fwd():
        return layer(f, table)

    def fwd_bwd():
        ops.total(fwd()).backward()

    return {"points": n_points, "c": c, "k": k, "forward": _timeit(fwd, repeats),
            "forward_backward": _timeit(fwd_bwd, repeats)}


def bench_block(n_points: int, c: int, k: int, height: int, width: int, repeats: int, rng) -> dict:
    block = FuseBlock(c, c, BRANCHES, rng=rng)
    n_points = min(n_points, height * width)
    flat = rng.choice(height * width, size=n_points, replace=False)
    pix = np.stack([flat % width, flat // width], axis=1)
    pts = random_points(n_points, rng)
    frame = FrameGeometry(PointSet(pts), precompute_table(pts, k), pix, np.ones(n_points, dtype=bool))
    geom = BatchGeometry.from_frames([frame], height, width)
    x = Parameter(rng.standard_normal((1, c, height, width)).astype(np.float32))

    def fwd_bwd():
        ops.total(block(x, geom)).backward()

    return {"points": n_points, "c": c, "k": k, "grid": [height, width],
            "forward": _timeit(lambda: block(x, geom), repeats), "forward_backward": _timeit(fwd_bwd, repeats)}


def run(points: int = 10_000, k: int = 9, c: int = 16, queries: int = 1000, repeats: int = 3,
        seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    sizes = sorted({max(k, points // 10), max(k, points // 3), points})
    return {
        "knn": [bench_knn(n, k, queries, repeats, rng) for n in sizes],
        "contconv": bench_contconv(points, c, k, repeats, rng),
        # 352x1216 crops give a 176x608 feature grid; a quarter of that keeps desk runs short.
        "block": bench_block(points, c, k, 88, 304, repeats, rng),
    }


def format_report(report: dict) -> str:
    lines = ["KNN (per-query median, seconds)",
             f"{'points':>8} {'K':>3} {'build':>9} {'tree/query':>11} {'brute/query':>12} {'speedup':>8}"]
    for r in report["knn"]:
        tq = r["tree_query"]["median_s"] / r["queries"]
        bq = r["brute_query"]["median_s"] / r["queries"]
        lines.append(f"{r['points']:>8} {r['k']:>3} {r['build']['median_s']:>9.4f} {tq:>11.2e} {bq:>12.2e} {bq / tq:>8.1f}")
    cc = report["contconv"]
    lines.append(f"contconv N={cc['points']} C={cc['c']} K={cc['k']}: forward min/median "
                 f"{cc['forward']['min_s']:.4f}/{cc['forward']['median_s']:.4f} s, forward+backward "
                 f"{cc['forward_backward']['min_s']:.4f}/{cc['forward_backward']['median_s']:.4f} s")
    b = report["block"]
    lines.append(f"fuse block {b['grid'][0]}x{b['grid'][1]} C={b['c']} points={b['points']}: forward min/median "
                 f"{b['forward']['min_s']:.4f}/{b['forward']['median_s']:.4f} s, forward+backward "
                 f"{b['forward_backward']['min_s']:.4f}/{b['forward_backward']['median_s']:.4f} s")
    return "\n".join(lines)

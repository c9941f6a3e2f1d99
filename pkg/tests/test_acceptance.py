"""Acceptance suite: one test per criterion, each recording a pass/fail line
that is printed in the terminal summary."""
import json

import numpy as np
import pytest
from PIL import Image

from depthfuse.config import resolve
from depthfuse.contconv import ContConvLayer, contconv_raw
from depthfuse.dataio import SyntheticSceneConfig, load_depth_png, save_depth_png, synth_generate
from depthfuse.fusenet import BatchGeometry, FuseBlock, FuseNet, FuseNetConfig, ablate, frame_geometry, param_count
from depthfuse.geometry import DepthImage, Intrinsics
from depthfuse.gradcheck import format_results, run_suite
from depthfuse.ndcore import Tensor, precision
from depthfuse.neighbors import KdTree, brute_force_knn, precompute_table
from depthfuse.objective import LossConfig, loss, metrics, smooth_l1
from depthfuse.train import TrainState, load_network, overfit, predict_frames, train

from oracles import contconv_oracle

# Published parameter counts per (C, N).
PUBLISHED_PARAMS = {(32, 6): 322_000, (32, 9): 445_000, (32, 12): 568_000, (32, 15): 692_000, (64, 12): 1_898_000}


def test_1_parameter_counts(record_criterion):
    rows, ok = [], True
    for (c, n), target in PUBLISHED_PARAMS.items():
        got = param_count(FuseNetConfig(C=c, N=n))
        dev = got / target - 1
        ok &= abs(dev) <= 0.03
        rows.append(f"C{c}N{n} {got} vs {target} ({dev:+.1%})")
    record_criterion(1, "parameter counts within 3%", ok, ", ".join(rows))
    assert ok, "; ".join(rows)


def test_2_gradients(record_criterion):
    results = run_suite(seeds=20)
    ok = all(r.passed for r in results)
    worst_op = max((r for r in results if r.threshold < 1e-3), key=lambda r: r.max_error)
    block = next(r for r in results if r.name == "fuse_block")
    record_criterion(2, "finite-difference gradients", ok,
                     f"{len(results)} checks x 20 seeds; worst op {worst_op.name} {worst_op.max_error:.1e}, "
                     f"fuse_block {block.max_error:.1e}")
    assert ok, format_results(results)


def test_3_knn_exact(record_criterion):
    rng = np.random.default_rng(0)
    total, mismatches = 0, 0
    for n in (10, 100, 5000):
        pts = rng.uniform(-10, 10, (n, 3))
        dup = rng.choice(n, size=max(1, n // 20), replace=False)
        pts[dup] = pts[rng.integers(0, n, size=len(dup))]
        tree = KdTree(pts)
        for k in (1, 3, 9, 15):
            if k > n:
                with pytest.raises(ValueError):
                    tree.query(pts[0], k)
                continue
            for q in range(1000):
                query = pts[rng.integers(n)] if q % 4 == 0 else rng.uniform(-11, 11, 3)
                mismatches += not np.array_equal(tree.query(query, k), brute_force_knn(pts, query, k))
                total += 1
    ok = total >= 10_000 and mismatches == 0
    record_criterion(3, "KD-tree equals brute force", ok, f"{total} queries, {mismatches} mismatches")
    assert ok


def test_4_contconv_oracle(record_criterion):
    rng = np.random.default_rng(1)
    worst = 0.0
    with precision(np.float64):
        for _ in range(100):
            n = int(rng.integers(1, 21))
            c = int(rng.choice([2, 4, 6, 8]))
            k = int(rng.integers(1, min(4, n) + 1))
            coords = rng.uniform(-3, 3, (n, 3))
            table = precompute_table(coords, k)
            layer = ContConvLayer(c, int(rng.integers(1, 9)), rng=rng)
            f = rng.standard_normal((n, c))
            got = contconv_raw(Tensor(f), table, layer).data
            want = contconv_oracle(f, table.indices, coords, layer)
            worst = max(worst, float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300)))
    ok = worst < 1e-10
    record_criterion(4, "continuous convolution oracle", ok, f"100 instances, max relative error {worst:.1e}")
    assert ok


def test_5_overfit(record_criterion):
    frame = synth_generate(SyntheticSceneConfig(seed=0))
    net = FuseNet(FuseNetConfig(C=16, N=3, K=9))
    losses, rmses = overfit(net, frame, 200, 0.005, milestones=(60, 100, 140, 180), decay=0.5)
    ratio = rmses[-1] / rmses[0]
    smooth = np.convolve(losses, np.ones(10) / 10, mode="valid")
    rises = int(np.sum(np.diff(smooth) > 0))
    ok = ratio < 0.1 and rises == 0
    record_criterion(5, "single-frame overfit", ok,
                     f"RMSE {rmses[0]:.2f} m -> {rmses[-1]:.2f} m (ratio {ratio:.3f}), "
                     f"{rises} rises in the smoothed loss")
    assert ok


def _fig3_scene():
    """Two points 3D-adjacent at 5 m but in opposite image corners; every other point at 50 m."""
    rng = np.random.default_rng(2)
    k = Intrinsics(40.0, 40.0, 32.0, 32.0, 64, 64)
    values = np.zeros((64, 64))
    values[8, 8] = values[56, 56] = 5.0
    far = rng.choice(np.arange(16, 48), size=(30, 2))
    values[far[:, 1], far[:, 0]] = 50.0
    geom = frame_geometry(DepthImage.from_values(values), k, k=2, budget=10_000)
    a = int(np.flatnonzero(np.all(geom.pixels == [4, 4], axis=1))[0])
    b = int(np.flatnonzero(np.all(geom.pixels == [28, 28], axis=1))[0])
    assert set(geom.table.indices[a]) == {a, b} and set(geom.table.indices[b]) == {a, b}
    return BatchGeometry.from_frames([geom], 32, 32)


def test_6_cross_space_flow(record_criterion):
    geom = _fig3_scene()
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 8, 32, 32))
    x2 = x.copy()
    x2[0, :, 4, 4] += rng.standard_normal(8) * 2

    def change_at_b(branches):
        block = FuseBlock(8, 8, branches, rng=np.random.default_rng(4))
        block.eval()
        return float(np.max(np.abs(block(Tensor(x2), geom).data[0, :, 28, 28]
                                   - block(Tensor(x), geom).data[0, :, 28, 28])))

    full = change_at_b(("s1", "s2", "cont"))
    flat = change_at_b(("s1", "s2"))
    ok = full > 0 and flat == 0
    record_criterion(6, "3D branch carries information across the image", ok,
                     f"change at the far pixel: full block {full:.3e}, 2D-only {flat:.1e}")
    assert ok


def test_7_loss_and_metrics(record_criterion):
    checks = {
        "smooth_l1(0.5)": smooth_l1(0.5, 0.0) == 0.125,
        "smooth_l1(1.5)": smooth_l1(1.5, 0.0) == 1.0,
    }
    gt = DepthImage.from_values(np.array([[2.0, 4.0]]))
    r = metrics(np.array([[2.1, 3.8]]), gt)
    checks["mae 150 mm"] = abs(r.mae_mm - 150.0) <= 1e-6
    checks["rmse 158.11 mm"] = abs(r.rmse_mm - 1000 * np.sqrt(0.025)) <= 1e-6 and round(r.rmse_mm, 2) == 158.11
    with precision(np.float64):
        pair = DepthImage.from_values(np.array([[1.0, 1.0]]))
        value = loss(Tensor(np.array([[[[1.5, 2.5]]]])), pair, LossConfig("SmoothL1")).item()
    checks["mean smooth-l1 0.5625"] = value == 0.5625
    rng = np.random.default_rng(5)
    jensen = True
    for _ in range(1000):
        g = rng.uniform(0.5, 80, (3, 5))
        rep = metrics(g + rng.standard_normal((3, 5)) * rng.uniform(0.01, 5), DepthImage.from_values(g))
        jensen &= rep.rmse_mm >= rep.mae_mm and rep.irmse >= rep.imae
    checks["rmse >= mae on 1000 random frames"] = jensen
    ok = all(checks.values())
    record_criterion(7, "loss and metric values", ok, ", ".join(f"{k} {'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert ok


def _tiny_run(out, **changes):
    base = {"synthetic": "true", "synthetic_frames": "3", "val_frames": "1", "synth_height": "32",
            "synth_width": "64", "synth_lines": "8", "C": "8", "N": "2", "K": "4", "sample_n": "100",
            "epochs_l2": "2", "epochs_combined": "2", "milestones": "1", "finetune_milestones": "1",
            "out": str(out)}
    base.update({k: str(v) for k, v in changes.items()})
    return resolve({}, base)


def _state_arrays(state: TrainState) -> dict:
    arrays = {f"p/{k}": v.data for k, v in state.net.named_parameters()}
    arrays.update({f"b/{k}": v for k, v in state.net.named_buffers()})
    arrays.update({f"o/{k}": v for k, v in state.optimizer.state_arrays().items()})
    return arrays


def test_8_round_trips(record_criterion, tmp_path):
    rng = np.random.default_rng(6)
    stored = rng.integers(0, 65536, (37, 53), dtype=np.uint16)
    Image.fromarray(stored).save(tmp_path / "in.png")
    save_depth_png(load_depth_png(tmp_path / "in.png"), tmp_path / "out.png")
    png_ok = np.array_equal(np.array(Image.open(tmp_path / "out.png")), stored)

    full = train(_tiny_run(tmp_path / "full"))
    frames = [synth_generate(SyntheticSceneConfig(height=32, width=64, lidar_line_count=8, seed=s)) for s in (7, 8)]
    net, _, _ = load_network(tmp_path / "full" / "checkpoint.bin")
    ckpt_ok = all(np.array_equal(a, b) for a, b in zip(predict_frames(full.net, frames), predict_frames(net, frames)))

    train(_tiny_run(tmp_path / "part", stop_after=3))
    resumed = train(_tiny_run(tmp_path / "rest", resume=tmp_path / "part" / "checkpoint.bin"))
    a, b = _state_arrays(full), _state_arrays(resumed)
    resume_ok = resumed.epoch == full.epoch == 4 and a.keys() == b.keys() and all(
        np.array_equal(a[k], b[k]) for k in a)
    log_full = [json.loads(s)["loss"] for s in (tmp_path / "full" / "train_log.jsonl").read_text().splitlines()]
    log_split = [json.loads(s)["loss"] for p in ("part", "rest")
                 for s in (tmp_path / p / "train_log.jsonl").read_text().splitlines()]
    resume_ok &= log_full == log_split

    ok = png_ok and ckpt_ok and resume_ok
    record_criterion(8, "format round trips", ok,
                     f"depth PNG {'ok' if png_ok else 'FAIL'}, checkpoint predictions "
                     f"{'bit-identical' if ckpt_ok else 'DIFFER'}, resume "
                     f"{'bit-identical' if resume_ok else 'DIFFERS'}")
    assert ok


@pytest.mark.parametrize("branches", ["s2,cont", "s1,cont", "s1,s2"])
def test_9_ablation_harness(record_criterion, tmp_path, branches):
    cfg = resolve({}, {"synthetic": "true", "epochs_l2": "1", "epochs_combined": "0", "val_frames": "0",
                       "branches": branches, "out": str(tmp_path)})
    state = train(cfg)
    entry = json.loads((tmp_path / "train_log.jsonl").read_text().splitlines()[-1])
    full = param_count(FuseNetConfig(C=cfg.C, N=cfg.N, K=cfg.K))
    mine = state.net.num_parameters()
    paper_scale_smaller = ablate(FuseNetConfig(), branches.split(",")).num_parameters() < param_count(FuseNetConfig())
    ok = state.epoch == 1 and np.isfinite(entry["loss"]) and mine < full and paper_scale_smaller
    record_criterion(9, "ablation harness", ok,
                     f"{{{branches}}} {cfg.synthetic_frames} frames loss {entry['loss']:.2f}, {mine} < {full} params")
    assert ok

"""Two-phase training, evaluation and prediction loops."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig
from .dataio import (Frame, SyntheticSceneConfig, discover_frames, load_frame, random_crop,
                     synth_generate)
from .fusenet import BatchGeometry, FuseNet, FuseNetConfig, frame_geometry, images_to_tensor, FEATURE_SCALE
from .geometry import feature_extent
from .ndcore.optim import Optimizer, lr_schedule
from .objective import MetricAccumulator, MetricReport, loss

log = logging.getLogger("depthfuse")


class DataError(RuntimeError):
    pass


class IncompatibleCheckpoint(RuntimeError):
    pass


def synthetic_config(cfg: RunConfig, seed: int) -> SyntheticSceneConfig:
    return SyntheticSceneConfig(height=cfg.synth_height, width=cfg.synth_width, box_count=cfg.synth_boxes,
                                lidar_line_count=cfg.synth_lines, noise_sigma=cfg.synth_noise, seed=seed)


def training_frames(cfg: RunConfig) -> list[Frame]:
    if cfg.synthetic:
        return [synth_generate(synthetic_config(cfg, cfg.seed + i)) for i in range(cfg.synthetic_frames)]
    return dataset_frames(cfg.dataset, split="train")


def validation_frames(cfg: RunConfig) -> list[Frame]:
    if cfg.synthetic:
        return [synth_generate(synthetic_config(cfg, cfg.seed + 1_000_000 + i)) for i in range(cfg.val_frames)]
    root = Path(cfg.dataset) / "val"
    return dataset_frames(root, split=None) if root.is_dir() else []


def dataset_frames(root, split: str | None = "train") -> list[Frame]:
    if not root:
        raise DataError("no data source: pass --dataset DIR or --synthetic")
    root = Path(root)
    if split is not None and (root / split).is_dir():
        root = root / split
    try:
        return [load_frame(root, fid) for fid in discover_frames(root)]
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from None


def batch_inputs(frames: list[Frame], dtype=np.float32):
    rgb = images_to_tensor([f.rgb for f in frames], dtype=dtype)
    return rgb, [f.sparse for f in frames], [f.intrinsics for f in frames]


def predict_frames(net: FuseNet, frames: list[Frame]) -> list[np.ndarray]:
    """Eval-mode predictions, one ``H x W`` array per frame."""
    net.eval()
    out = []
    for f in frames:
        rgb, sparse, intr = batch_inputs([f])
        pred = net(rgb, sparse, intr)
        out.append(pred.data[0, 0].astype(np.float64))
    return out


def evaluate(net: FuseNet, frames: list[Frame]) -> tuple[list[tuple[str, MetricReport]], MetricReport]:
    """Per-frame reports and the report pooled over every labelled pixel."""
    pooled = MetricAccumulator()
    rows = []
    for f, pred in zip(frames, predict_frames(net, frames)):
        if f.gt is None:
            raise DataError(f"frame {f.id} has no ground truth; use the predict command instead")
        acc = MetricAccumulator()
        acc.update(pred, f.gt)
        pooled.update(pred, f.gt)
        rows.append((f.id, acc.report()))
    return rows, pooled.report()


@dataclass
class TrainState:
    net: FuseNet
    optimizer: Optimizer
    rng: np.random.Generator
    epoch: int = 0


def model_record(model: FuseNetConfig) -> dict:
    d = dataclasses.asdict(model)
    d["branches"] = list(model.branches)
    return d


def model_from_record(rec: dict) -> FuseNetConfig:
    rec = dict(rec)
    rec["branches"] = tuple(rec["branches"])
    return FuseNetConfig(**rec)


def save_checkpoint(path, state: TrainState, cfg: RunConfig) -> None:
    blobs = {f"param/{k}": v.data for k, v in state.net.named_parameters()}
    blobs.update({f"buffer/{k}": v for k, v in state.net.named_buffers()})
    blobs.update({f"optim/{k}": v for k, v in state.optimizer.state_arrays().items()})
    record = {
        "model": model_record(state.net.cfg),
        "epoch": state.epoch,
        "optimizer": {"kind": state.optimizer.kind, "step": state.optimizer.state.get("step", 0)},
        "rng_state": state.rng.bit_generator.state,
        "run": {k: v for k, v in dataclasses.asdict(cfg).items()},
    }
    ckpt.save(path, record, blobs)


def load_network(path) -> tuple[FuseNet, dict, dict]:
    try:
        record, blobs = ckpt.load(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} not found") from None
    net = FuseNet(model_from_record(record["model"]))
    state = {k[len("param/"):]: v for k, v in blobs.items() if k.startswith("param/")}
    state.update({k[len("buffer/"):]: v for k, v in blobs.items() if k.startswith("buffer/")})
    net.load_state_dict(state)
    return net, record, blobs


def new_state(cfg: RunConfig) -> TrainState:
    net = FuseNet(cfg.model_config())
    return TrainState(net, Optimizer(net.parameters(), cfg.optimizer), np.random.default_rng(cfg.seed))


def resume_state(cfg: RunConfig, path) -> TrainState:
    net, record, blobs = load_network(path)
    if net.cfg != cfg.model_config():
        raise IncompatibleCheckpoint(
            f"checkpoint {path} was trained with {net.cfg}, but this run asks for {cfg.model_config()}; "
            "pass matching model flags or start a fresh run without --resume")
    opt = Optimizer(net.parameters(), record["optimizer"]["kind"])
    opt.load_state(record["optimizer"]["step"],
                   {k[len("optim/"):]: v for k, v in blobs.items() if k.startswith("optim/")})
    rng = np.random.default_rng()
    rng.bit_generator.state = record["rng_state"]
    return TrainState(net, opt, rng, record["epoch"])


def phase_of(cfg: RunConfig, epoch: int) -> tuple[str, float]:
    """Loss phase and learning rate for a global epoch index."""
    if epoch < cfg.epochs_l2:
        return "l2", lr_schedule(epoch, cfg.base_lr, cfg.milestone_list(), cfg.decay)
    local = epoch - cfg.epochs_l2
    return "combined", lr_schedule(local, cfg.finetune_lr, cfg.finetune_milestone_list(), cfg.decay)


class GeometryCache:
    """Neighbor tables are reused whenever a frame's sampling is deterministic."""

    def __init__(self, model: FuseNetConfig):
        self.model = model
        self._cache: dict[int, object] = {}

    def batch(self, frames: list[Frame], keys: list[int] | None, rng) -> BatchGeometry | None:
        if not self.model.uses_points:
            return None
        per_frame = []
        for i, f in enumerate(frames):
            key = None if keys is None else keys[i]
            if key is not None and key in self._cache:
                per_frame.append(self._cache[key])
                continue
            g = frame_geometry(f.sparse, f.intrinsics, self.model.K, self.model.sample_n, rng)
            if key is not None and f.sparse.count <= self.model.sample_n:
                self._cache[key] = g
            per_frame.append(g)
        h, w = feature_extent(frames[0].intrinsics, FEATURE_SCALE)
        return BatchGeometry.from_frames(per_frame, h, w)


def train_step(state: TrainState, frames: list[Frame], geom, loss_cfg, lr: float) -> float:
    net = state.net
    net.train()
    rgb, sparse, intr = batch_inputs(frames)
    pred = net(rgb, sparse, intr, geom)
    value = loss(pred, [f.gt for f in frames], loss_cfg)
    state.optimizer.zero_grad()
    value.backward()
    state.optimizer.step(lr)
    return value.item()


def train(cfg: RunConfig, out_dir=None, on_epoch=None) -> TrainState:
    """Run (or resume) the two-phase schedule; a checkpoint is written after every epoch."""
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = training_frames(cfg)
    for f in frames:
        if f.gt is None:
            raise DataError(f"training frame {f.id} has no ground truth")
    val = validation_frames(cfg)
    state = resume_state(cfg, cfg.resume) if cfg.resume else new_state(cfg)
    cache = GeometryCache(state.net.cfg)
    crop = cfg.crop_height > 0 and cfg.crop_width > 0
    total_epochs = cfg.epochs_l2 + cfg.epochs_combined
    ckpt_path = Path(cfg.checkpoint) if cfg.checkpoint else out / "checkpoint.bin"
    log_path = out / "train_log.jsonl"
    ran = 0
    while state.epoch < total_epochs:
        epoch = state.epoch
        phase, lr = phase_of(cfg, epoch)
        loss_cfg = cfg.loss_config(phase)
        order = state.rng.permutation(len(frames))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = [int(i) for i in order[start:start + cfg.batch_size]]
            batch = [frames[i] for i in idx]
            if crop:
                batch = [random_crop(f, cfg.crop_height, cfg.crop_width, state.rng) for f in batch]
            geom = cache.batch(batch, None if crop else idx, state.rng)
            losses.append(train_step(state, batch, geom, loss_cfg, lr))
        state.epoch += 1
        ran += 1
        entry = {"epoch": state.epoch, "phase": phase, "lr": lr, "loss": float(np.mean(losses))}
        if val:
            entry["val_rmse_mm"] = evaluate(state.net, val)[1].rmse_mm
        with log_path.open("a") as fh:
            fh.write(json.dumps(entry) + "\n")
        log.info("epoch %d/%d %s lr=%.3g loss=%.4f%s", state.epoch, total_epochs, phase, lr, entry["loss"],
                 f" val_rmse={entry['val_rmse_mm']:.1f}mm" if "val_rmse_mm" in entry else "")
        save_checkpoint(ckpt_path, state, cfg)
        if on_epoch is not None:
            on_epoch(state, entry)
        if cfg.stop_after and ran >= cfg.stop_after:
            break
    return state


def overfit(net: FuseNet, frame: Frame, iterations: int, lr: float, loss_cfg=None,
            milestones=(), decay: float = 0.5) -> tuple[list[float], list[float]]:
    """Train on one frame; returns per-iteration loss and masked training RMSE (meters).

    The learning rate follows the step schedule with iteration-indexed ``milestones``.

    Entry ``i`` of both lists is measured on the forward pass of iteration ``i``,
    before that iteration's update.
    """
    from .objective import LossConfig

    loss_cfg = loss_cfg or LossConfig("L2")
    opt = Optimizer(net.parameters(), "adam")
    geom = net.prepare(frame.sparse, frame.intrinsics)
    rgb, sparse, intr = batch_inputs([frame])
    m = frame.gt.mask
    losses, rmses = [], []
    net.train()
    for _ in range(iterations):
        pred = net(rgb, sparse, intr, geom)
        err = pred.data[0, 0].astype(np.float64)[m] - frame.gt.values[m]
        rmses.append(float(np.sqrt(np.mean(err * err))))
        value = loss(pred, [frame.gt], loss_cfg)
        losses.append(value.item())
        opt.zero_grad()
        value.backward()
        opt.step(lr_schedule(len(losses) - 1, lr, milestones, decay))
    return losses, rmses



"""Masked training losses and the four benchmark metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import DepthImage
from .ndcore.tensor import Tensor, make_result

LOSS_KINDS = ("L2", "SmoothL1", "Combined")
INVERSE_DEPTH_FLOOR = 1e-3


@dataclass(frozen=True)
class LossConfig:
    kind: str = "L2"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; choose from {LOSS_KINDS}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")


def smooth_l1(d, l):
    """0.5 e^2 when |e| < 1, else |e| - 0.5, with e = d - l. Works elementwise."""
    e = np.abs(np.asarray(d, dtype=np.float64) - np.asarray(l, dtype=np.float64))
    out = np.where(e < 1.0, 0.5 * e * e, e - 0.5)
    return float(out) if out.ndim == 0 else out


def _smooth_l1_grad(e: np.ndarray) -> np.ndarray:
    return np.where(np.abs(e) < 1.0, e, np.sign(e))


def _stack_gt(gt, shape) -> tuple[np.ndarray, np.ndarray]:
    items = gt if isinstance(gt, (list, tuple)) else [gt]
    values = np.stack([g.values for g in items])
    mask = np.stack([g.mask for g in items])
    if values.shape != (shape[0],) + tuple(shape[2:]):
        raise ValueError(f"ground truth {values.shape} does not match prediction {shape}")
    return values, mask


def loss(pred: Tensor, gt, cfg: LossConfig = LossConfig()) -> Tensor:
    """Loss averaged over labelled pixels of a ``[B,1,H,W]`` prediction.

    ``L2`` is the mean squared error, ``SmoothL1`` the mean smooth-l1, and
    ``Combined`` is ``L2 + gamma * SmoothL1``.
    """
    if pred.ndim != 4 or pred.shape[1] != 1:
        raise ValueError(f"prediction must be [B,1,H,W], got {pred.shape}")
    values, mask = _stack_gt(gt, pred.shape)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("ground truth mask is empty")
    p = pred.data[:, 0].astype(np.float64)
    e = np.where(mask, p - values, 0.0)
    l2 = (e * e).sum() / n
    sl1 = np.where(mask, smooth_l1(p, values), 0.0).sum() / n
    if cfg.kind == "L2":
        value, grad = l2, 2.0 * e / n
    elif cfg.kind == "SmoothL1":
        value, grad = sl1, _smooth_l1_grad(e) / n
    else:
        value = l2 + cfg.gamma * sl1
        grad = 2.0 * e / n + cfg.gamma * _smooth_l1_grad(e) / n
    grad = np.where(mask, grad, 0.0)[:, None].astype(pred.dtype)

    def backward(g):
        return (grad * g,)

    return make_result(np.asarray(value, dtype=pred.dtype), (pred,), backward, f"loss_{cfg.kind}")


@dataclass
class MetricReport:
    rmse_mm: float
    mae_mm: float
    irmse: float
    imae: float
    pixel_count: int
    floor_triggered: bool = False

    def to_text(self) -> str:
        lines = [
            f"rmse_mm = {self.rmse_mm:.2f}",
            f"mae_mm = {self.mae_mm:.2f}",
            f"irmse_1_per_km = {self.irmse:.2f}",
            f"imae_1_per_km = {self.imae:.2f}",
            f"pixel_count = {self.pixel_count}",
        ]
        if self.floor_triggered:
            lines.append(f"inverse_depth_floor_m = {INVERSE_DEPTH_FLOOR}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        kv = {}
        for line in text.splitlines():
            if "=" in line:
                key, value = (s.strip() for s in line.split("=", 1))
                kv[key] = value
        return cls(float(kv["rmse_mm"]), float(kv["mae_mm"]), float(kv["irmse_1_per_km"]),
                   float(kv["imae_1_per_km"]), int(kv["pixel_count"]),
                   "inverse_depth_floor_m" in kv)

    def as_dict(self) -> dict:
        return asdict(self)


class MetricAccumulator:
    """Pools squared/absolute errors over every labelled pixel of many frames."""

    def __init__(self):
        self.n = 0
        self.sq = 0.0
        self.ab = 0.0
        self.isq = 0.0
        self.iab = 0.0
        self.floor_triggered = False

    def update(self, pred: np.ndarray, gt: DepthImage) -> None:
        pred = np.asarray(pred, dtype=np.float64).reshape(gt.shape)
        m = gt.mask
        if not np.any(m):
            return
        if np.any(gt.values[m] <= 0):
            raise ValueError("ground truth depths must be positive")
        p = pred[m]
        g = gt.values[m]
        e = p - g
        clamped = np.maximum(p, INVERSE_DEPTH_FLOOR)
        if np.any(p < INVERSE_DEPTH_FLOOR):
            self.floor_triggered = True
        ie = 1000.0 / clamped - 1000.0 / g  # 1/km
        self.n += int(m.sum())
        self.sq += float((e * e).sum())
        self.ab += float(np.abs(e).sum())
        self.isq += float((ie * ie).sum())
        self.iab += float(np.abs(ie).sum())

    def report(self) -> MetricReport:
        if self.n == 0:
            raise ValueError("ground truth mask is empty; nothing to evaluate")
        return MetricReport(1000.0 * np.sqrt(self.sq / self.n), 1000.0 * self.ab / self.n,
                            float(np.sqrt(self.isq / self.n)), self.iab / self.n, self.n,
                            self.floor_triggered)


def metrics(pred, gt) -> MetricReport:
    """RMSE/MAE in millimeters and iRMSE/iMAE in 1/km over labelled pixels."""
    acc = MetricAccumulator()
    if isinstance(pred, Tensor):
        pred = pred.data
    if isinstance(gt, (list, tuple)):
        for i, g in enumerate(gt):
            acc.update(pred[i], g)
    else:
        acc.update(pred, gt)
    return acc.report()


def format_table(rows: list[tuple[str, MetricReport]]) -> str:
    """Benchmark-style table: RMSE (mm), MAE (mm), iRMSE (1/km), iMAE (1/km)."""
    name_w = max([len("frame")] + [len(n) for n, _ in rows])
    head = f"{'frame':<{name_w}} | {'RMSE (mm)':>10} | {'MAE (mm)':>10} | {'iRMSE (1/km)':>12} | {'iMAE (1/km)':>11}"
    lines = [head, "-" * len(head)]
    for name, r in rows:
        lines.append(f"{name:<{name_w}} | {r.rmse_mm:>10.2f} | {r.mae_mm:>10.2f} | {r.irmse:>12.2f} | {r.imae:>11.2f}")
    return "\n".join(lines)

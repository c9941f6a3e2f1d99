"""Pinhole projection between camera-frame points and image grids.

Pixel ``(u, v)`` has its center at integer coordinates, so unprojecting a pixel
and projecting the point back at scale 1 returns the same indices. Feature maps
at scale ``s`` index a full-resolution pixel ``u`` as ``floor(s * u)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ndcore.tensor import Tensor, make_result


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image extents must be positive, got {self.width}x{self.height}")

    def shifted(self, dx: int, dy: int, width: int, height: int) -> "Intrinsics":
        """Intrinsics of a crop whose top-left corner sits at ``(dx, dy)``."""
        return Intrinsics(self.fx, self.fy, self.cx - dx, self.cy - dy, width, height)

    def to_text(self) -> str:
        return f"{self.fx!r} {self.fy!r} {self.cx!r} {self.cy!r} {self.width} {self.height}\n"

    @classmethod
    def from_text(cls, text: str) -> "Intrinsics":
        fields = text.split()
        if len(fields) != 6:
            raise ValueError(f"intrinsics record needs 6 fields (fx fy cx cy width height), got {len(fields)}")
        fx, fy, cx, cy = (float(f) for f in fields[:4])
        return cls(fx, fy, cx, cy, int(fields[4]), int(fields[5]))


def load_intrinsics(path) -> Intrinsics:
    try:
        return Intrinsics.from_text(Path(path).read_text())
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def save_intrinsics(k: Intrinsics, path) -> None:
    Path(path).write_text(k.to_text())


@dataclass
class DepthImage:
    """Metric depth with an observation mask; unobserved pixels hold 0."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise ValueError(f"depth {self.values.shape} and mask {self.mask.shape} must be equal 2-D shapes")
        observed = self.values[self.mask]
        if not np.all(np.isfinite(observed)) or np.any(observed <= 0):
            raise ValueError("observed depths must be positive and finite")
        if np.any(self.values[~self.mask] != 0):
            raise ValueError("unobserved pixels must carry depth 0")

    @classmethod
    def from_values(cls, values) -> "DepthImage":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, values > 0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass
class PointSet:
    """``N x 3`` camera-frame coordinates in meters (x right, y down, z forward)."""

    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValueError(f"points must be N x 3, got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("point coordinates must be finite")
        if np.any(self.coords[:, 2] <= 0):
            raise ValueError("all points must lie in front of the camera (z > 0)")

    def __len__(self) -> int:
        return self.coords.shape[0]


def unproject(depth: DepthImage, k: Intrinsics, pixels: np.ndarray | None = None) -> PointSet:
    """Back-project observed pixels (row-major order) to camera-frame points.

    ``pixels`` optionally restricts the result to an ``M x 2`` array of ``(u, v)``.
    """
    h, w = depth.shape
    if (w, h) != (k.width, k.height):
        raise ValueError(f"depth extents {w}x{h} do not match intrinsics {k.width}x{k.height}")
    if pixels is None:
        vs, us = np.nonzero(depth.mask)
    else:
        pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        us, vs = pixels[:, 0], pixels[:, 1]
        if not np.all(depth.mask[vs, us]):
            raise ValueError("requested pixels include unobserved depth")
    if us.size == 0:
        raise ValueError("depth image has no observed pixels; no geometry available")
    z = depth.values[vs, us]
    x = (us - k.cx) * z / k.fx
    y = (vs - k.cy) * z / k.fy
    return PointSet(np.stack([x, y, z], axis=1))


def project_continuous(points: PointSet, k: Intrinsics) -> np.ndarray:
    """Full-resolution continuous pixel coordinates ``(u, v)``."""
    c = points.coords if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    if np.any(c[:, 2] <= 0):
        raise ValueError("cannot project points with z <= 0")
    u = k.fx * c[:, 0] / c[:, 2] + k.cx
    v = k.fy * c[:, 1] / c[:, 2] + k.cy
    return np.stack([u, v], axis=1)


def feature_extent(k: Intrinsics, scale: float) -> tuple[int, int]:
    """``(height, width)`` of the feature grid at ``scale``."""
    return int(np.floor(k.height * scale)), int(np.floor(k.width * scale))


def project(points: PointSet, k: Intrinsics, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Integer feature-grid pixels ``(u, v)`` and an in-bounds mask.

    The full-resolution pixel is the nearest integer center (halves round up);
    at ``scale`` it maps to ``floor(scale * u_full)``. Out-of-bounds points are
    flagged, not dropped.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    uv = project_continuous(points, k)
    full = np.floor(uv + 0.5)
    pix = np.floor(full * scale).astype(np.int64)
    h, w = feature_extent(k, scale)
    inside = (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
    return pix, inside


def _flat_index(pixels, mask, h, w, batch):
    pixels = np.asarray(pixels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    b = np.zeros(len(pixels), dtype=np.int64) if batch is None else np.asarray(batch, dtype=np.int64)
    flat = (b * h + pixels[:, 1]) * w + pixels[:, 0]
    return np.where(mask, flat, -1)


def _as_batched(feat: Tensor):
    if feat.ndim == 3:
        return 1, feat.shape
    if feat.ndim == 4:
        return feat.shape[0], feat.shape[1:]
    raise ValueError(f"feature map must be [C,H,W] or [B,C,H,W], got {feat.shape}")


def gather(feat: Tensor, pixels, mask, batch=None) -> Tensor:
    """Nearest-pixel feature lookup -> ``[N, C]``; masked-out points get zeros.

    ``feat`` is ``[C,H,W]``, or ``[B,C,H,W]`` with ``batch`` giving each point's frame.
    Backward scatter-adds into the map.
    """
    nb, (c, h, w) = _as_batched(feat)
    flat = _flat_index(pixels, mask, h, w, batch)
    valid = flat >= 0
    table = feat.data.reshape(nb, c, h * w).transpose(0, 2, 1).reshape(nb * h * w, c)
    out = np.zeros((len(flat), c), dtype=feat.dtype)
    out[valid] = table[flat[valid]]
    shape = feat.shape

    def backward(g):
        acc = np.zeros((nb * h * w, c), dtype=g.dtype)
        np.add.at(acc, flat[valid], g[valid])
        return (acc.reshape(nb, h * w, c).transpose(0, 2, 1).reshape(shape),)

    return make_result(out, (feat,), backward, "gather")


def scatter(point_feats: Tensor, pixels, mask, h: int, w: int, batch=None, batch_size=None) -> Tensor:
    """Place ``[N, C]`` point features on an empty ``[C,H,W]`` (or ``[B,C,H,W]``) map.

    A pixel hit by several points holds the mean of their rows.
    """
    n, c = point_feats.shape
    nb = 1 if batch is None and batch_size is None else int(batch_size if batch_size is not None
                                                             else np.max(batch) + 1)
    flat = _flat_index(pixels, mask, h, w, batch)
    valid = flat >= 0
    counts = np.bincount(flat[valid], minlength=nb * h * w).astype(point_feats.dtype)
    acc = np.zeros((nb * h * w, c), dtype=point_feats.dtype)
    np.add.at(acc, flat[valid], point_feats.data[valid])
    hit = counts > 0
    acc[hit] /= counts[hit, None]
    out = acc.reshape(nb, h * w, c).transpose(0, 2, 1).reshape(nb, c, h, w)
    if batch is None and batch_size is None:
        out = out[0]
    weights = np.zeros(n, dtype=point_feats.dtype)
    weights[valid] = 1.0 / counts[flat[valid]]

    def backward(g):
        gmap = g.reshape(nb, c, h * w).transpose(0, 2, 1).reshape(nb * h * w, c)
        gp = np.zeros((n, c), dtype=g.dtype)
        gp[valid] = gmap[flat[valid]] * weights[valid, None]
        return (gp,)

    return make_result(np.ascontiguousarray(out), (point_feats,), backward, "scatter")

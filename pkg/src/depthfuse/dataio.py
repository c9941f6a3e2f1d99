"""Frame ingestion, cropping, point sampling and a synthetic RGBD scene generator.

Depth files are 16-bit single-channel PNGs storing ``round(meters * 256)``,
with 0 meaning "no observation".
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import DepthImage, Intrinsics, load_intrinsics

DEPTH_SCALE = 256.0
MAX_SPARSE_DENSITY = 0.30


def load_depth_png(path) -> DepthImage:
    path = Path(path)
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I"):
            raise ValueError(f"{path}: expected a 16-bit single-channel depth image, got mode {im.mode}")
        arr = np.array(im)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected one channel, got array of shape {arr.shape}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 65535:
        raise ValueError(f"{path}: values outside the 16-bit range")
    stored = arr.astype(np.uint16)
    return DepthImage(stored.astype(np.float64) / DEPTH_SCALE, stored > 0)


def encode_depth(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) * DEPTH_SCALE + 0.5), 0, 65535).astype(np.uint16)


def save_depth_png(depth, path) -> None:
    values = depth.values if isinstance(depth, DepthImage) else np.asarray(depth)
    Image.fromarray(encode_depth(values)).save(Path(path))


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"))


def save_rgb(rgb: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(Path(path))


@dataclass
class Frame:
    rgb: np.ndarray
    sparse: DepthImage
    intrinsics: Intrinsics
    gt: DepthImage | None = None
    id: str = ""

    def __post_init__(self):
        h, w = self.sparse.shape
        if self.rgb.shape != (h, w, 3):
            raise ValueError(f"frame {self.id!r}: rgb {self.rgb.shape} does not match depth {h}x{w}")
        if self.gt is not None and self.gt.shape != (h, w):
            raise ValueError(f"frame {self.id!r}: gt {self.gt.shape} does not match depth {h}x{w}")
        if (self.intrinsics.height, self.intrinsics.width) != (h, w):
            raise ValueError(f"frame {self.id!r}: intrinsics extents do not match depth {h}x{w}")
        density = self.sparse.count / (h * w)
        if density >= MAX_SPARSE_DENSITY:
            raise ValueError(f"frame {self.id!r}: sparse density {density:.2f} is not LiDAR-like "
                             f"(must be below {MAX_SPARSE_DENSITY})")

    @property
    def shape(self) -> tuple[int, int]:
        return self.sparse.shape


def _crop_depth(d: DepthImage, y: int, x: int, h: int, w: int) -> DepthImage:
    return DepthImage(d.values[y:y + h, x:x + w].copy(), d.mask[y:y + h, x:x + w].copy())


def crop(frame: Frame, x: int, y: int, h: int, w: int) -> Frame:
    fh, fw = frame.shape
    if h > fh or w > fw or x < 0 or y < 0 or x + w > fw or y + h > fh:
        raise ValueError(f"crop {w}x{h} at ({x},{y}) does not fit in frame {fw}x{fh}")
    return Frame(frame.rgb[y:y + h, x:x + w].copy(), _crop_depth(frame.sparse, y, x, h, w),
                 frame.intrinsics.shifted(x, y, w, h),
                 None if frame.gt is None else _crop_depth(frame.gt, y, x, h, w), frame.id)


def random_crop(frame: Frame, h: int, w: int, rng: np.random.Generator) -> Frame:
    """Same random window for rgb, sparse and gt; the principal point moves with it."""
    fh, fw = frame.shape
    if h > fh or w > fw:
        raise ValueError(f"crop {w}x{h} is larger than frame {fw}x{fh}")
    y = int(rng.integers(0, fh - h + 1))
    x = int(rng.integers(0, fw - w + 1))
    return crop(frame, x, y, h, w)


def sample_points(depth: DepthImage, budget: int = 10_000,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Observed pixels ``(u, v)`` in row-major order, subsampled without replacement
    to ``budget`` when there are more."""
    if budget < 1:
        raise ValueError(f"point budget must be at least 1, got {budget}")
    vs, us = np.nonzero(depth.mask)
    if us.size == 0:
        raise ValueError("depth image has no observed pixels to sample")
    if us.size > budget:
        rng = rng if rng is not None else np.random.default_rng(0)
        keep = np.sort(rng.choice(us.size, size=budget, replace=False))
        us, vs = us[keep], vs[keep]
    return np.stack([us, vs], axis=1)


# KITTI-style directory layout -------------------------------------------------------------

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _stems(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        return {}
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in _IMAGE_SUFFIXES}


def discover_frames(root) -> list[str]:
    """Frame ids present in both ``rgb/`` and ``sparse/`` under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    rgb, sparse = _stems(root / "rgb"), _stems(root / "sparse")
    ids = sorted(set(rgb) & set(sparse))
    if not ids:
        raise FileNotFoundError(f"no frames found under {root} (expected matching stems in rgb/ and sparse/)")
    return ids


def _intrinsics_for(root: Path, frame_id: str) -> Intrinsics:
    per_frame = root / "intrinsics" / f"{frame_id}.txt"
    if per_frame.exists():
        return load_intrinsics(per_frame)
    shared = root / "intrinsics.txt"
    if shared.exists():
        return load_intrinsics(shared)
    raise FileNotFoundError(f"no intrinsics for frame {frame_id} (looked for {per_frame} and {shared})")


def load_frame(root, frame_id: str) -> Frame:
    root = Path(root)
    rgb = load_rgb(_stems(root / "rgb")[frame_id])
    sparse = load_depth_png(_stems(root / "sparse")[frame_id])
    gt_path = _stems(root / "gt").get(frame_id)
    gt = load_depth_png(gt_path) if gt_path is not None else None
    return Frame(rgb, sparse, _intrinsics_for(root, frame_id), gt, frame_id)


def save_frame(frame: Frame, root) -> None:
    root = Path(root)
    for sub in ("rgb", "sparse", "gt", "intrinsics"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    save_rgb(frame.rgb, root / "rgb" / f"{frame.id}.png")
    save_depth_png(frame.sparse, root / "sparse" / f"{frame.id}.png")
    if frame.gt is not None:
        save_depth_png(frame.gt, root / "gt" / f"{frame.id}.png")
    (root / "intrinsics" / f"{frame.id}.txt").write_text(frame.intrinsics.to_text())


# Synthetic scenes --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSceneConfig:
    height: int = 64
    width: int = 192
    plane_count: int = 1
    box_count: int = 4
    depth_min: float = 4.0
    depth_max: float = 40.0
    lidar_line_count: int = 16
    noise_sigma: float = 0.0
    camera_height: float = 1.65
    seed: int = 0

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError("synthetic extents must be at least 2x2")
        if not 0 < self.depth_min < self.depth_max:
            raise ValueError(f"depth range must satisfy 0 < min < max, got {self.depth_min}..{self.depth_max}")
        if self.camera_height <= 0:
            raise ValueError("camera must sit above the ground plane")
        if not 1 <= self.lidar_line_count <= self.height:
            raise ValueError(f"lidar_line_count must be in [1, {self.height}]")
        if self.plane_count not in (0, 1):
            raise ValueError("plane_count must be 0 or 1 (a single ground plane)")
        if self.box_count < 0 or self.noise_sigma < 0:
            raise ValueError("box_count and noise_sigma must be non-negative")


@dataclass
class _Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    albedo: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))


_LIGHT = np.array([0.3, -0.8, -0.5])
_LIGHT = _LIGHT / np.sqrt(_LIGHT @ _LIGHT)


def synthetic_intrinsics(cfg: SyntheticSceneConfig) -> Intrinsics:
    f = cfg.width / 2.0
    return Intrinsics(f, f, cfg.width / 2.0, cfg.height / 2.0, cfg.width, cfg.height)


def scan_rows(cfg: SyntheticSceneConfig) -> np.ndarray:
    step = cfg.height // cfg.lidar_line_count
    return np.arange(step // 2, cfg.height, step)[: cfg.lidar_line_count]


def _random_boxes(cfg: SyntheticSceneConfig, rng: np.random.Generator) -> list[_Box]:
    boxes = []
    far = cfg.depth_min + 0.6 * (cfg.depth_max - cfg.depth_min)
    for _ in range(cfg.box_count):
        z0 = rng.uniform(cfg.depth_min + 1.0, max(far, cfg.depth_min + 1.5))
        depth = rng.uniform(1.0, 3.0)
        half_w = rng.uniform(0.5, 1.5)
        xc = rng.uniform(-0.5, 0.5) * z0
        height = rng.uniform(1.0, 2.5)
        albedo = tuple(rng.uniform(0.3, 1.0, size=3).tolist())
        boxes.append(_Box((xc - half_w, cfg.camera_height - height, z0),
                          (xc + half_w, cfg.camera_height, z0 + depth), albedo))
    return boxes


def _render(cfg: SyntheticSceneConfig, k: Intrinsics, boxes: list[_Box]):
    """Ray cast every pixel center; only +, -, *, / on the depth path."""
    h, w = cfg.height, cfg.width
    us = np.arange(w, dtype=np.float64)[None, :].repeat(h, 0)
    vs = np.arange(h, dtype=np.float64)[:, None].repeat(w, 1)
    a = (us - k.cx) / k.fx  # ray (a, b, 1): depth equals the ray parameter
    b = (vs - k.cy) / k.fy

    depth = np.full((h, w), cfg.depth_max)
    normal = np.zeros((h, w, 3))
    normal[..., 2] = -1.0
    albedo = np.full((h, w, 3), 0.55)
    albedo[..., 2] = 0.85  # back wall reads as sky

    if cfg.plane_count:
        below = b > 0
        zg = np.where(below, cfg.camera_height / np.where(below, b, 1.0), np.inf)
        hit = zg < depth
        depth = np.where(hit, zg, depth)
        normal[hit] = (0.0, -1.0, 0.0)
        zf = np.where(below, zg, 0.0)
        checker = (np.floor(a * zf / 2.0) + np.floor(zf / 2.0)) % 2 == 0
        tone = np.where(checker, 0.45, 0.3)
        albedo[hit] = np.stack([tone, tone * 0.9, tone * 0.7], axis=-1)[hit]

    dirs = (a, b, np.ones_like(a))
    for box in boxes:
        tnear = np.full((h, w), -np.inf)
        tfar = np.full((h, w), np.inf)
        near_axis = np.zeros((h, w), dtype=np.int64)
        for ax in range(3):
            d = dirs[ax]
            nz = d != 0
            safe = np.where(nz, d, 1.0)
            t1 = np.where(nz, box.lo[ax] / safe, np.where(box.lo[ax] <= 0, -np.inf, np.inf))
            t2 = np.where(nz, box.hi[ax] / safe, np.where(box.hi[ax] >= 0, np.inf, -np.inf))
            t_in = np.minimum(t1, t2)
            t_out = np.maximum(t1, t2)
            better = t_in > tnear
            near_axis = np.where(better, ax, near_axis)
            tnear = np.maximum(tnear, t_in)
            tfar = np.minimum(tfar, t_out)
        hit = (tnear <= tfar) & (tnear > 0) & (tnear < depth)
        depth = np.where(hit, tnear, depth)
        for ax in range(3):
            sel = hit & (near_axis == ax)
            normal[sel] = 0.0
            normal[sel, ax] = -np.sign(dirs[ax][sel])
        albedo[hit] = box.albedo

    shade = 0.3 + 0.7 * np.clip(normal @ _LIGHT, 0.0, None)
    rgb = np.clip(np.floor(255.0 * albedo * shade[..., None] + 0.5), 0, 255).astype(np.uint8)
    return depth, rgb


def synth_generate(cfg: SyntheticSceneConfig) -> Frame:
    """Boxes on a ground plane in front of a far wall, seen by a pinhole camera.

    ``gt`` is exact dense depth; ``sparse`` keeps every pixel on evenly spaced scan
    rows, with optional Gaussian noise.
    """
    rng = np.random.default_rng(cfg.seed)
    k = synthetic_intrinsics(cfg)
    boxes = _random_boxes(cfg, rng)
    for box in boxes:
        if box.lo[2] <= 0:
            raise ValueError("degenerate scene: object behind the camera")
    depth, rgb = _render(cfg, k, boxes)
    gt = DepthImage(depth, np.ones_like(depth, dtype=bool))
    rows = scan_rows(cfg)
    sparse_vals = np.zeros_like(depth)
    sparse_vals[rows] = depth[rows]
    if cfg.noise_sigma > 0:
        noise = rng.standard_normal(size=(len(rows), cfg.width)) * cfg.noise_sigma
        sparse_vals[rows] = np.maximum(sparse_vals[rows] + noise, 1.0 / DEPTH_SCALE)
    sparse = DepthImage(sparse_vals, sparse_vals > 0)
    return Frame(rgb, sparse, k, gt, f"synth_{cfg.seed:06d}")

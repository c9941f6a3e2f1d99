"""The 2D-3D fuse block and the stacked depth-completion network."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .contconv import ContConvLayer
from .dataio import sample_points
from .geometry import DepthImage, Intrinsics, PointSet, feature_extent, gather, project, scatter, unproject
from .ndcore import ops
from .ndcore.layers import Conv2dLayer, ConvBNReLU, Module
from .ndcore.tensor import Tensor, default_dtype
from .neighbors import DEFAULT_K, NeighborTable, precompute_table

BRANCHES = ("s1", "s2", "cont")
STEM_DEPTH = 16
STEM_RGBD = 32
FEATURE_SCALE = 0.5


@dataclass(frozen=True)
class FuseNetConfig:
    C: int = 64
    N: int = 12
    K: int = DEFAULT_K
    sample_n: int = 10_000
    gamma: float = 1.0
    branches: tuple[str, ...] = BRANCHES
    seed: int = 0

    def __post_init__(self):
        if self.C < 2 or self.C % 2:
            raise ValueError(f"channel width C must be even and positive, got {self.C}")
        if self.N < 1:
            raise ValueError(f"block count N must be at least 1, got {self.N}")
        if self.K < 1:
            raise ValueError(f"neighbor count K must be at least 1, got {self.K}")
        if self.sample_n < 1:
            raise ValueError(f"sample_n must be at least 1, got {self.sample_n}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        branches = tuple(b for b in BRANCHES if b in set(self.branches))
        unknown = set(self.branches) - set(BRANCHES)
        if unknown:
            raise ValueError(f"unknown branches {sorted(unknown)}; choose from {BRANCHES}")
        if not branches:
            raise ValueError("a fuse block needs at least one branch")
        object.__setattr__(self, "branches", branches)

    @property
    def uses_points(self) -> bool:
        return "cont" in self.branches


@dataclass
class FrameGeometry:
    """Sampled points of one frame, their neighbor table and feature-grid pixels."""

    points: PointSet
    table: NeighborTable
    pixels: np.ndarray
    inside: np.ndarray


def frame_geometry(sparse: DepthImage, intrinsics: Intrinsics, k: int = DEFAULT_K,
                   budget: int = 10_000, rng: np.random.Generator | None = None,
                   scale: float = FEATURE_SCALE) -> FrameGeometry:
    rng = rng if rng is not None else np.random.default_rng(0)
    pix = sample_points(sparse, budget, rng)
    points = unproject(sparse, intrinsics, pix)
    table = precompute_table(points, k)
    pixels, inside = project(points, intrinsics, scale)
    return FrameGeometry(points, table, pixels, inside)


@dataclass
class BatchGeometry:
    """Per-frame geometry concatenated over a batch; indices are global."""

    table: NeighborTable
    pixels: np.ndarray
    inside: np.ndarray
    batch: np.ndarray
    batch_size: int
    height: int
    width: int
    frames: list[FrameGeometry] = field(default_factory=list)

    @classmethod
    def from_frames(cls, frames: list[FrameGeometry], height: int, width: int) -> "BatchGeometry":
        table = NeighborTable.concatenate([f.table for f in frames])
        batch = np.concatenate([np.full(len(f.points), b, dtype=np.int64) for b, f in enumerate(frames)])
        return cls(table, np.concatenate([f.pixels for f in frames]),
                   np.concatenate([f.inside for f in frames]), batch, len(frames), height, width,
                   list(frames))

    @property
    def n_points(self) -> int:
        return self.table.n


class FuseBlock(Module):
    """Stride-1 and stride-2 2D branches plus a continuous-convolution branch, summed
    in image space, fused by ``conv(3, 1, C)`` with a shortcut when widths match."""

    def __init__(self, c_in: int, c: int, branches=BRANCHES, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in = c_in
        self.c = c
        self.branches = tuple(b for b in BRANCHES if b in set(branches))
        if not self.branches:
            raise ValueError("a fuse block needs at least one branch")
        if "s1" in self.branches:
            self.s1 = ConvBNReLU(c_in, c, 3, 1, rng=rng)
        if "s2" in self.branches:
            self.s2_down = ConvBNReLU(c_in, c, 3, 2, rng=rng)
            self.s2_conv = ConvBNReLU(c, c, 3, 1, rng=rng)
        if "cont" in self.branches:
            self.cont1 = ContConvLayer(c_in, c, rng=rng)
            self.cont2 = ContConvLayer(c, c, rng=rng)
        self.fuse = ConvBNReLU(c, c, 3, 1, rng=rng)
        self.shortcut = c_in == c
        # Test hook: when False the 3D branch output is replaced by zeros.
        self.cont_enabled = True

    def branch_outputs(self, x: Tensor, geom: BatchGeometry | None) -> dict[str, Tensor]:
        outs = {}
        if "s1" in self.branches:
            outs["s1"] = self.s1(x)
        if "s2" in self.branches:
            outs["s2"] = ops.upsample2x_bilinear(self.s2_conv(self.s2_down(x)))
        if "cont" in self.branches and self.cont_enabled:
            if geom is None:
                raise ValueError("the continuous-convolution branch needs point geometry")
            outs["cont"] = self.point_branch(x, geom)
        return outs

    def point_branch(self, x: Tensor, geom: BatchGeometry) -> Tensor:
        b, _, h, w = x.shape
        if (h, w) != (geom.height, geom.width):
            raise ValueError(f"geometry was prepared for a {geom.height}x{geom.width} grid, "
                             f"block input is {h}x{w}")
        pf = gather(x, geom.pixels, geom.inside, geom.batch)
        pf = self.cont1(pf, geom.table)
        pf = self.cont2(pf, geom.table)
        return scatter(pf, geom.pixels, geom.inside, h, w, geom.batch, b)

    def forward(self, x: Tensor, geom: BatchGeometry | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"fuse block expects {self.c_in} input channels, got shape {x.shape}")
        outs = list(self.branch_outputs(x, geom).values())
        if not outs:
            outs = [Tensor(np.zeros((x.shape[0], self.c) + x.shape[2:], dtype=x.dtype))]
        y = self.fuse(ops.add_n(outs))
        if self.shortcut:
            y = ops.add(y, x)
        return y


def block_forward(block: FuseBlock, x: Tensor, geom: BatchGeometry | None = None) -> Tensor:
    return block.forward(x, geom)


def _as_list(value, n: int, what: str) -> list:
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise ValueError(f"expected {n} {what}, got {len(value)}")
        return list(value)
    return [value] * n


class FuseNet(Module):
    """Two stride-2 stems, ``N`` fuse blocks at half resolution, and an upsampling head."""

    def __init__(self, cfg: FuseNetConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.stem_depth = [ConvBNReLU(1, STEM_DEPTH, 3, 2, rng=rng),
                           ConvBNReLU(STEM_DEPTH, STEM_DEPTH, 3, 1, rng=rng)]
        self.stem_rgbd = [ConvBNReLU(4, STEM_RGBD, 3, 2, rng=rng),
                          ConvBNReLU(STEM_RGBD, STEM_RGBD, 3, 1, rng=rng)]
        widths = [STEM_DEPTH + STEM_RGBD] + [cfg.C] * cfg.N
        self.blocks = [FuseBlock(widths[i], cfg.C, cfg.branches, rng=rng) for i in range(cfg.N)]
        self.head_conv = ConvBNReLU(cfg.C, cfg.C, 3, 1, rng=rng)
        self.head_out = Conv2dLayer(cfg.C, 1, 3, 1, rng=rng)

    def prepare(self, sparse, intrinsics, rng: np.random.Generator | None = None) -> BatchGeometry | None:
        """Sample points, build neighbor tables and feature-grid pixels for a batch."""
        sparse = sparse if isinstance(sparse, (list, tuple)) else [sparse]
        intr = _as_list(intrinsics, len(sparse), "intrinsics")
        for s in sparse:
            if s.count == 0:
                raise ValueError("sparse depth has no observed pixels")
        if not self.cfg.uses_points:
            return None
        frames = [frame_geometry(s, k, self.cfg.K, self.cfg.sample_n, rng) for s, k in zip(sparse, intr)]
        h, w = feature_extent(intr[0], FEATURE_SCALE)
        return BatchGeometry.from_frames(frames, h, w)

    def forward(self, rgb: Tensor, sparse, intrinsics, geom: BatchGeometry | None = None) -> Tensor:
        sparse = sparse if isinstance(sparse, (list, tuple)) else [sparse]
        if rgb.ndim != 4 or rgb.shape[1] != 3:
            raise ValueError(f"rgb must be [B,3,H,W], got {rgb.shape}")
        b, _, h, w = rgb.shape
        if len(sparse) != b:
            raise ValueError(f"{len(sparse)} sparse depth images for a batch of {b}")
        if h % 2 or w % 2:
            raise ValueError(f"input extents must be even, got {h}x{w}")
        for s in sparse:
            if s.shape != (h, w):
                raise ValueError(f"sparse depth {s.shape} does not match rgb {h}x{w}")
            if s.count == 0:
                raise ValueError("sparse depth has no observed pixels")
        for k in _as_list(intrinsics, b, "intrinsics"):
            if (k.height, k.width) != (h, w):
                raise ValueError(f"intrinsics {k.width}x{k.height} do not match image {w}x{h}")
        if geom is None and self.cfg.uses_points:
            geom = self.prepare(sparse, intrinsics)
        depth = Tensor(np.stack([s.values for s in sparse])[:, None], dtype=rgb.dtype)
        d = depth
        for layer in self.stem_depth:
            d = layer(d)
        r = ops.concat_channels(rgb, depth)
        for layer in self.stem_rgbd:
            r = layer(r)
        x = ops.concat_channels(d, r)
        for block in self.blocks:
            x = block(x, geom)
        x = ops.upsample2x_bilinear(x)
        return self.head_out(self.head_conv(x))


def network_forward(net: FuseNet, rgb: Tensor, sparse, intrinsics, geom=None) -> Tensor:
    return net.forward(rgb, sparse, intrinsics, geom)


def build_network(cfg: FuseNetConfig) -> FuseNet:
    return FuseNet(cfg)


def ablate(cfg: FuseNetConfig, branches) -> FuseNet:
    """Network variant keeping only the listed block branches (subset of s1, s2, cont)."""
    branches = tuple(branches)
    if not branches:
        raise ValueError("ablation needs a non-empty branch subset")
    return FuseNet(replace(cfg, branches=branches))


def param_count(cfg: FuseNetConfig) -> int:
    """Learnable scalars: conv kernels and biases, BN affine pairs, MLP and W weights."""
    return FuseNet(cfg).num_parameters()


def images_to_tensor(rgb_images, dtype=None) -> Tensor:
    """``[H,W,3]`` uint8 images -> ``[B,3,H,W]`` tensor scaled to [0, 1]."""
    arr = np.stack([np.asarray(im) for im in rgb_images]).astype(np.float64) / 255.0
    return Tensor(arr.transpose(0, 3, 1, 2), dtype=dtype or default_dtype())

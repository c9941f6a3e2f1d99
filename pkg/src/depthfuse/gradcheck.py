"""Central finite-difference checks for every differentiable operation.

Each case builds a small random instance in 64-bit precision and a forward
function. The scalar checked is ``sum(out * R)`` for a fixed Gaussian ``R``, so
every output entry contributes. Per entry the relative error is

    |analytic - numeric| / max(|analytic|, |numeric|, floor)

with ``floor`` guarding entries whose true gradient is (near) zero, where the
numeric estimate is pure round-off.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geometry
from .contconv import ContConvLayer, contconv_forward, contconv_raw
from .ndcore import ops
from .ndcore.layers import BatchNormLayer, Conv2dLayer, LinearLayer
from .ndcore.tensor import Parameter, Tensor, precision
from .neighbors import NeighborTable, precompute_table
from .objective import LossConfig, loss

STEP = 1e-6
OP_THRESHOLD = 1e-4
BLOCK_THRESHOLD = 1e-3
FLOOR = 1e-5

Builder = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


def max_relative_error(forward: Callable[[], Tensor], inputs: list[Tensor], rng: np.random.Generator,
                       step: float = STEP, max_entries: int | None = None, floor: float = FLOOR) -> float:
    out = forward()
    proj = Tensor(rng.standard_normal(out.shape), dtype=out.dtype)

    def objective() -> Tensor:
        return ops.total(ops.mul(forward(), proj))

    for t in inputs:
        t.grad = None
    objective().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in entries:
            orig = flat[i]
            flat[i] = orig + step
            fp = objective().item()
            flat[i] = orig - step
            fm = objective().item()
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            ai = a.reshape(-1)[i]
            err = abs(ai - num) / max(abs(ai), abs(num), floor)
            worst = max(worst, err)
    return worst


@dataclass
class GradCase:
    name: str
    build: Builder
    threshold: float = OP_THRESHOLD
    max_entries: int | None = None


@dataclass
class GradResult:
    name: str
    max_error: float
    threshold: float
    seeds: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold


def _param(rng, *shape) -> Parameter:
    return Parameter(rng.standard_normal(shape))


def _randomize(layer, rng) -> None:
    for p in layer.parameters():
        p.data[...] = rng.uniform(-1, 1, size=p.shape)


def _conv_case(stride: int) -> Builder:
    def build(rng):
        b = int(rng.integers(1, 3))
        cin, cout = (int(v) for v in rng.integers(1, 4, size=2))
        k = 3 if stride == 2 else int(rng.choice([1, 3, 5]))
        h, w = (2 * int(v) for v in rng.integers(1, 4, size=2))
        layer = Conv2dLayer(cin, cout, k, stride, rng=rng)
        x = _param(rng, b, cin, h, w)
        return (lambda: ops.conv2d(x, layer)), [x, layer.weight, layer.bias]
    return build


def _bn_case(training: bool) -> Builder:
    def build(rng):
        c = int(rng.integers(1, 4))
        shape = (int(rng.integers(2, 4)), c, 3, 2) if rng.random() < 0.5 else (int(rng.integers(3, 8)), c)
        layer = BatchNormLayer(c)
        _randomize(layer, rng)
        layer.running_mean[...] = rng.standard_normal(c)
        layer.running_var[...] = rng.uniform(0.5, 2.0, size=c)
        layer.train(training)
        x = _param(rng, *shape)
        return (lambda: ops.batchnorm(x, layer)), [x, layer.gamma, layer.beta]
    return build


def _relu(rng):
    shape = tuple(int(v) for v in rng.integers(1, 5, size=2))
    x = Parameter(rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape))
    return (lambda: ops.relu(x)), [x]


def _upsample(rng):
    x = _param(rng, int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    return (lambda: ops.upsample2x_bilinear(x)), [x]


def _linear(rng):
    m, din, dout = (int(v) for v in rng.integers(1, 5, size=3))
    layer = LinearLayer(din, dout, rng=rng)
    x = _param(rng, m, din)
    return (lambda: ops.linear(x, layer)), [x, layer.weight, layer.bias]


def _binary(op) -> Builder:
    def build(rng):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        a, b = _param(rng, *shape), _param(rng, *shape)
        return (lambda: op(a, b)), [a, b]
    return build


def _concat(rng):
    b, h, w = (int(v) for v in rng.integers(1, 4, size=3))
    x = _param(rng, b, int(rng.integers(1, 4)), h, w)
    y = _param(rng, b, int(rng.integers(1, 4)), h, w)
    return (lambda: ops.concat_channels(x, y)), [x, y]


def _index_rows(rng):
    n, c = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    x = _param(rng, n, c)
    idx = rng.integers(0, n, size=(int(rng.integers(1, 8)),))
    return (lambda: ops.index_rows(x, idx)), [x]


def _sum_axis(rng):
    x = _param(rng, *(int(v) for v in rng.integers(1, 4, size=3)))
    axis = int(rng.integers(0, 3))
    return (lambda: ops.sum_axis(x, axis)), [x]


def _pixels(rng, n, h, w):
    pix = np.stack([rng.integers(-1, w + 1, size=n), rng.integers(-1, h + 1, size=n)], axis=1)
    inside = (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
    return pix, inside


def _gather(rng):
    c, h, w = int(rng.integers(1, 4)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
    feat = _param(rng, c, h, w)
    pix, inside = _pixels(rng, int(rng.integers(1, 10)), h, w)
    return (lambda: geometry.gather(feat, pix, inside)), [feat]


def _scatter(rng):
    c, h, w = int(rng.integers(1, 4)), int(rng.integers(2, 4)), int(rng.integers(2, 4))
    n = int(rng.integers(1, 10))
    pf = _param(rng, n, c)
    pix, inside = _pixels(rng, n, h, w)
    return (lambda: geometry.scatter(pf, pix, inside, h, w)), [pf]


def random_table(rng, n: int, k: int) -> NeighborTable:
    pts = rng.uniform(-1, 1, size=(n, 3)) + np.array([0.0, 0.0, 5.0])
    return precompute_table(pts, k)


def _contconv(full: bool) -> Builder:
    def build(rng):
        n, k = int(rng.integers(3, 8)), int(rng.integers(1, 4))
        c_in = 2 * int(rng.integers(1, 3))
        c_out = 2 * int(rng.integers(1, 3))
        table = random_table(rng, n, k)
        layer = ContConvLayer(c_in, c_out, rng=rng)
        _randomize(layer, rng)
        f = _param(rng, n, c_in)
        fn = contconv_forward if full else contconv_raw
        params = [f] + [p for p in layer.parameters() if full or p not in (layer.bn.gamma, layer.bn.beta)]
        return (lambda: fn(f, table, layer)), params
    return build


def _loss_case(kind: str) -> Builder:
    def build(rng):
        b, h, w = int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        gt_vals = rng.uniform(1, 5, size=(b, h, w))
        mask = rng.random((b, h, w)) < 0.6
        mask[:, 0, 0] = True
        gts = [geometry.DepthImage(np.where(m, v, 0), m) for v, m in zip(gt_vals, mask)]
        pred = Parameter(gt_vals[:, None] + rng.uniform(-3, 3, size=(b, 1, h, w)))
        cfg = LossConfig(kind, gamma=float(rng.uniform(0.1, 2.0)))
        return (lambda: loss(pred, gts, cfg)), [pred]
    return build


def tiny_block_instance(rng, c: int = 4, hw: int = 8, n_points: int = 6, k: int = 3, branches=None):
    """A fuse block on a ``c x hw x hw`` map with a handful of projected points."""
    from .fusenet import BRANCHES, BatchGeometry, FrameGeometry, FuseBlock

    block = FuseBlock(c, c, branches or BRANCHES, rng=rng)
    _randomize(block, rng)
    flat = rng.choice(hw * hw, size=n_points, replace=False)
    pix = np.stack([flat % hw, flat // hw], axis=1)
    pts = np.concatenate([rng.uniform(-1, 1, size=(n_points, 2)), rng.uniform(4, 6, size=(n_points, 1))], axis=1)
    table = precompute_table(pts, k)
    frame = FrameGeometry(geometry.PointSet(pts), table, pix, np.ones(n_points, dtype=bool))
    geom = BatchGeometry.from_frames([frame], hw, hw)
    x = _param(rng, 1, c, hw, hw)
    return block, x, geom


def _fuse_block(rng):
    block, x, geom = tiny_block_instance(rng)
    return (lambda: block(x, geom)), [x] + block.parameters()


CASES: list[GradCase] = [
    GradCase("conv2d_stride1", _conv_case(1)),
    GradCase("conv2d_stride2", _conv_case(2)),
    GradCase("batchnorm_train", _bn_case(True)),
    GradCase("batchnorm_eval", _bn_case(False)),
    GradCase("relu", _relu),
    GradCase("upsample2x_bilinear", _upsample),
    GradCase("linear", _linear),
    GradCase("add", _binary(ops.add)),
    GradCase("mul", _binary(ops.mul)),
    GradCase("concat_channels", _concat),
    GradCase("index_rows", _index_rows),
    GradCase("sum_axis", _sum_axis),
    GradCase("gather", _gather),
    GradCase("scatter", _scatter),
    GradCase("contconv_raw", _contconv(False)),
    GradCase("contconv", _contconv(True)),
    GradCase("loss_L2", _loss_case("L2")),
    GradCase("loss_SmoothL1", _loss_case("SmoothL1")),
    GradCase("loss_Combined", _loss_case("Combined")),
    GradCase("fuse_block", _fuse_block, BLOCK_THRESHOLD, max_entries=8),
]


def run_case(case: GradCase, seeds: int = 20, base_seed: int = 0) -> GradResult:
    start = time.perf_counter()
    worst = 0.0
    with precision(np.float64):
        for s in range(seeds):
            rng = np.random.default_rng([base_seed, s])
            forward, inputs = case.build(rng)
            worst = max(worst, max_relative_error(forward, inputs, rng, max_entries=case.max_entries))
    return GradResult(case.name, worst, case.threshold, seeds, time.perf_counter() - start)


def run_suite(seeds: int = 20, cases: list[GradCase] | None = None, base_seed: int = 0) -> list[GradResult]:
    return [run_case(c, seeds, base_seed) for c in (CASES if cases is None else cases)]


def format_results(results: list[GradResult]) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'operation':<{w}}  {'max rel err':>11}  {'threshold':>9}  {'seeds':>5}  result"]
    for r in results:
        lines.append(f"{r.name:<{w}}  {r.max_error:>11.3e}  {r.threshold:>9.0e}  {r.seeds:>5}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)

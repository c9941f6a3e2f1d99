"""Continuous convolution over a precomputed neighbor table.

For point ``i`` with neighbors ``k``::

    h_i = W( sum_k MLP(x_i - x_k) * f_k )

The MLP (3 -> C_in/2 -> C_in, ReLU between) produces a per-channel weight for
each neighbor, the sum over neighbors is unnormalized, and ``W`` is a bias-free
linear map to the output width. The full layer adds batch normalization over
points and a ReLU.
"""
from __future__ import annotations

import numpy as np

from .ndcore import ops
from .ndcore.layers import BatchNormLayer, LinearLayer, Module
from .ndcore.tensor import Tensor
from .neighbors import NeighborTable


class ContConvLayer(Module):
    def __init__(self, c_in: int, c_out: int | None = None, rng: np.random.Generator | None = None):
        c_out = c_in if c_out is None else c_out
        if c_in % 2:
            raise ValueError(f"continuous convolution width must be even, got {c_in}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in = c_in
        self.c_out = c_out
        self.mlp_hidden = LinearLayer(3, c_in // 2, rng=rng)
        self.mlp_out = LinearLayer(c_in // 2, c_in, rng=rng)
        self.W = LinearLayer(c_in, c_out, bias=False, rng=rng)
        self.bn = BatchNormLayer(c_out)

    def forward(self, f: Tensor, table: NeighborTable) -> Tensor:
        return contconv_forward(f, table, self)


def neighbor_weights(table: NeighborTable, layer: ContConvLayer, dtype) -> Tensor:
    """MLP of the relative offsets, ``[N*K, C_in]``; geometry carries no gradient."""
    offsets = Tensor(table.offsets.reshape(-1, 3), dtype=dtype)
    return layer.mlp_out(ops.relu(layer.mlp_hidden(offsets)))


def contconv_raw(f: Tensor, table: NeighborTable, layer: ContConvLayer) -> Tensor:
    """The aggregation and linear transform, without normalization or activation."""
    if f.ndim != 2 or f.shape[1] != layer.c_in:
        raise ValueError(f"contconv: feature width {f.shape[-1]} does not match layer width {layer.c_in}")
    if table.n != f.shape[0]:
        raise ValueError(f"contconv: table has {table.n} rows but there are {f.shape[0]} points")
    n, k = table.indices.shape
    c = layer.c_in
    weights = neighbor_weights(table, layer, f.dtype)
    fk = ops.index_rows(f, table.indices.reshape(-1))
    agg = ops.sum_axis(ops.reshape(ops.mul(weights, fk), (n, k, c)), 1)
    return layer.W(agg)


def contconv_forward(f: Tensor, table: NeighborTable, layer: ContConvLayer) -> Tensor:
    return ops.relu(layer.bn(contconv_raw(f, table, layer)))

"""Differentiable operations on :class:`Tensor`.

Layer-backed ops (``conv2d``, ``batchnorm``, ``linear``) take the layer object
and read its parameter tensors, so gradients land on the layer's parameters.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_result


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim == 0 or b.size == 1 and a.size != 1:
        # Scalar offset; used by tests for identity checks.
        s = b.data.reshape(())
        return make_result(a.data + s, (a, b),
                           lambda g: (g, np.asarray(g.sum(), dtype=b.dtype).reshape(b.shape)), "add")
    _same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_n(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("add_n: need at least one tensor")
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "add_n")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out += t.data
    return make_result(out, tensors, lambda g: tuple(g for _ in tensors), "add_n")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    return make_result(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along axis 1 (channels of ``[B,C,H,W]`` or columns of ``[N,C]``)."""
    if a.ndim != b.ndim or a.ndim < 2:
        raise ValueError(f"concat_channels: incompatible ranks {a.shape} and {b.shape}")
    if a.shape[:1] + a.shape[2:] != b.shape[:1] + b.shape[2:]:
        raise ValueError(f"concat_channels: non-channel extents differ, {a.shape} vs {b.shape}")
    ca = a.shape[1]
    return make_result(np.concatenate([a.data, b.data], axis=1), (a, b),
                       lambda g: (g[:, :ca], g[:, ca:]), "concat_channels")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_result(np.where(pos, x.data, 0).astype(x.dtype), (x,),
                       lambda g: (g * pos,), "relu")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def sum_axis(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]

    def backward(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis),)

    return make_result(x.data.sum(axis=axis), (x,), backward, "sum_axis")


def total(x: Tensor) -> Tensor:
    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                       lambda g: (np.full(x.shape, g, dtype=x.dtype),), "total")


def index_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into the source rows."""
    index = np.asarray(index, dtype=np.int64)
    n, c = x.shape

    def backward(g):
        gx = np.zeros((n, c), dtype=g.dtype)
        np.add.at(gx, index.reshape(-1), g.reshape(-1, c))
        return (gx,)

    return make_result(x.data[index], (x,), backward, "index_rows")


def linear(x: Tensor, layer) -> Tensor:
    w = layer.weight
    b = layer.bias
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {w.shape} "
                         f"(expected last dimension {w.shape[1]})")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        grads = [g @ w.data, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return make_result(out, parents, backward, "linear")


def conv2d(x: Tensor, layer) -> Tensor:
    """Cross-correlation with zero padding, via im2col and a single contraction."""
    w = layer.weight
    b = layer.bias
    s = layer.stride
    p = layer.padding
    if x.ndim != 4:
        raise ValueError(f"conv2d: expected [B,C,H,W] input, got shape {x.shape}")
    bsz, cin, h, wd = x.shape
    cout, wcin, k, _ = w.shape
    if cin != wcin:
        raise ValueError(f"conv2d: input channel dimension is {cin} but kernel expects {wcin}")
    if h % s or wd % s:
        raise ValueError(f"conv2d: spatial extents H={h}, W={wd} not divisible by stride {s}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    ho = (h + 2 * p - k) // s + 1
    wo = (wd + 2 * p - k) // s + 1
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gx = None
        if x.requires_grad:
            gcols = np.tensordot(g, w.data, axes=([1], [0]))  # B,Ho,Wo,Cin,k,k
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + h, p:p + wd]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_result(out, parents, backward, "conv2d")


def batchnorm(x: Tensor, layer) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    In training mode the batch statistics are used and the layer's running
    statistics are updated in place; in eval mode the running statistics are used.
    """
    gamma, beta = layer.gamma, layer.beta
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise ValueError(f"batchnorm: channel extent of {x.shape} does not match "
                         f"{gamma.shape[0]} layer channels")
    axes = (0,) + tuple(range(2, x.ndim))
    n = x.size // x.shape[1]
    if n == 0:
        raise ValueError("batchnorm: zero-size batch")
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    eps = layer.eps
    if layer.training:
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(bshape)
        var = (centered * centered).mean(axis=axes)
        m = layer.momentum
        unbiased = var * (n / (n - 1)) if n > 1 else var
        layer.running_mean[...] = (1 - m) * layer.running_mean + m * mean
        layer.running_var[...] = (1 - m) * layer.running_var + m * unbiased
    else:
        mean = layer.running_mean.astype(x.dtype)
        var = layer.running_var.astype(x.dtype)
        centered = x.data - mean.reshape(bshape)
    invstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * invstd.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    training = layer.training

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (invstd.reshape(bshape) / n) * (
                n * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
        else:
            gx = dxhat * invstd.reshape(bshape)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward, "batchnorm")


def _bilinear_matrix(n: int, dtype) -> np.ndarray:
    """Interpolation matrix (2n x n) for 2x upsampling with half-pixel centers."""
    out = np.zeros((2 * n, n), dtype=np.float64)
    for o in range(2 * n):
        src = max((o + 0.5) / 2.0 - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        frac = src - i0
        out[o, i0] += 1.0 - frac
        out[o, i1] += frac
    return out.astype(dtype)


def upsample2x_bilinear(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"upsample2x_bilinear: expected [B,C,H,W], got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    ah = _bilinear_matrix(h, x.dtype)
    aw = _bilinear_matrix(w, x.dtype)
    out = ah @ x.data @ aw.T

    def backward(g):
        return (ah.T @ g @ aw,)

    return make_result(np.ascontiguousarray(out), (x,), backward, "upsample2x_bilinear")

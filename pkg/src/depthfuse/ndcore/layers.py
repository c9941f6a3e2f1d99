"""Parameterized layers and a small module container."""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Parameter, Tensor, default_dtype


class Module:
    """Container that discovers parameters, buffers and sub-modules by attribute.

    Attribute insertion order fixes the naming and ordering of parameters, which
    keeps checkpoints and optimizer state aligned.
    """

    training = True
    _buffer_names: tuple[str, ...] = ()

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - (set(own) | set(bufs))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match {p.shape}")
            p.data[...] = value
        for name, b in bufs.items():
            b[...] = np.asarray(state[name])

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2dLayer(Module):
    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=None):
        if k % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {k}")
        if stride < 1:
            raise ValueError(f"stride must be positive, got {stride}")
        rng = rng if rng is not None else np.random.default_rng(0)
        dtype = dtype or default_dtype()
        fan_in = c_in * k * k
        self.weight = Parameter(_uniform(rng, (c_out, c_in, k, k), fan_in), dtype=dtype)
        self.bias = Parameter(_uniform(rng, (c_out,), fan_in), dtype=dtype) if bias else None
        self.stride = stride
        self.padding = (k - 1) // 2

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self)


class LinearLayer(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        dtype = dtype or default_dtype()
        self.weight = Parameter(_uniform(rng, (d_out, d_in), d_in), dtype=dtype)
        self.bias = Parameter(_uniform(rng, (d_out,), d_in), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self)


class BatchNormLayer(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=None):
        dtype = dtype or default_dtype()
        self.gamma = Parameter(np.ones(channels), dtype=dtype)
        self.beta = Parameter(np.zeros(channels), dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm(x, self)


class ConvBNReLU(Module):
    """``conv(k, s, c)`` followed by batch normalization and ReLU."""

    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 rng: np.random.Generator | None = None):
        self.conv = Conv2dLayer(c_in, c_out, k, stride, rng=rng)
        self.bn = BatchNormLayer(c_out)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))

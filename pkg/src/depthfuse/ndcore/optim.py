"""Optimizers and the step learning-rate schedule."""
from __future__ import annotations

import numpy as np


def lr_schedule(epoch: int, base_lr: float, milestones=(), factor: float = 0.1) -> float:
    """``base_lr * factor ** (number of milestones <= epoch)``."""
    milestones = list(milestones)
    if any(b <= a for a, b in zip(milestones, milestones[1:])):
        raise ValueError(f"milestones must be strictly increasing: {milestones}")
    passed = sum(1 for m in milestones if m <= epoch)
    return base_lr * factor ** passed


def adam_step(params, grads, state: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update, in place on ``params``.

    ``state`` holds ``step`` and per-parameter ``m``/``v`` lists; it is created
    on first use. Returns ``(params, state)``.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    if "m" not in state:
        state["step"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    if len(state["m"]) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    state["step"] += 1
    t = state["step"]
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
    return params, state


def sgd_step(params, grads, state: dict, lr: float, momentum: float = 0.9):
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if "buf" not in state:
        state["step"] = 0
        state["buf"] = [np.zeros_like(p) for p in params]
    state["step"] += 1
    for p, g, buf in zip(params, grads, state["buf"]):
        if g is None:
            continue
        buf *= momentum
        buf += g
        p -= (lr * buf).astype(p.dtype)
    return params, state


class Optimizer:
    """Binds a parameter list to Adam or SGD-with-momentum state."""

    def __init__(self, params, kind: str = "adam", betas=(0.9, 0.999), eps: float = 1e-8,
                 momentum: float = 0.9):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params = list(params)
        self.kind = kind
        self.betas = tuple(betas)
        self.eps = eps
        self.momentum = momentum
        self.state: dict = {}

    def step(self, lr: float) -> None:
        data = [p.data for p in self.params]
        grads = [p.grad for p in self.params]
        if self.kind == "adam":
            adam_step(data, grads, self.state, lr, self.betas, self.eps)
        else:
            sgd_step(data, grads, self.state, lr, self.momentum)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for key in ("m", "v", "buf"):
            for i, arr in enumerate(self.state.get(key, [])):
                out[f"{key}.{i}"] = arr
        return out

    def load_state(self, step: int, arrays: dict[str, np.ndarray]) -> None:
        self.state = {"step": step} if step else {}
        keys = ("m", "v") if self.kind == "adam" else ("buf",)
        if step:
            for key in keys:
                self.state[key] = [np.array(arrays[f"{key}.{i}"], dtype=p.dtype)
                                   for i, p in enumerate(self.params)]

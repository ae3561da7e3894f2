"""AdamW with decoupled weight decay, plus the cosine learning-rate factor."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["AdamWState", "adamw_step", "cosine_lr", "AdamW"]


@dataclass
class AdamWState:
    """First/second moment buffers and the shared step counter."""

    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamWState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    weight_decay: float = 0.0,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamWState]:
    """One decoupled-weight-decay Adam update. Params are updated in place.

    Moments are bias-corrected; weight decay multiplies the parameter
    directly (not the gradient), scaled by lr.
    """
    if lr <= 0.0:
        raise ValueError(f"lr must be positive, got {lr}")
    if len(params) != len(grads):
        raise ValueError("params and grads length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")

    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = betas
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step

    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay != 0.0:
            p -= lr * weight_decay * p
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
    return params, state


def cosine_lr(lr0: float, t: int, t_total: int) -> float:
    """lr_t = lr0 * 0.5 * (1 + cos(pi * t / t_total))."""
    if t_total <= 0:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * min(t, t_total) / t_total))


class AdamW:
    """Parameter-group wrapper over adamw_step for tensors on a tape.

    Each group is a dict with keys ``params`` (list of Tensor), ``lr`` and
    optionally ``weight_decay``. Gradients are read from ``Tensor.grad``.
    """

    def __init__(self, groups: list[dict], betas: tuple[float, float] = (0.9, 0.999),
                 weight_decay: float = 0.0):
        self.groups = groups
        self.betas = betas
        self.default_weight_decay = weight_decay
        self._states = [AdamWState() for _ in groups]

    def step(self, lr_scale: float = 1.0) -> None:
        for group, state in zip(self.groups, self._states):
            tensors: list[Tensor] = group["params"]
            grads = []
            for t in tensors:
                grads.append(t.grad if t.grad is not None else np.zeros_like(t.data))
            adamw_step(
                [t.data for t in tensors],
                grads,
                state,
                lr=group["lr"] * lr_scale,
                betas=self.betas,
                weight_decay=group.get("weight_decay", self.default_weight_decay),
            )

    def zero_grad(self) -> None:
        for group in self.groups:
            for t in group["params"]:
                t.zero_grad()

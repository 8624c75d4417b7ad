"""Nesterov momentum SGD and the step-decay learning-rate schedule."""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.9
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def nesterov_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState
) -> tuple[list[np.ndarray], OptimizerState]:
    """Pure Nesterov update.

    v <- mu*v - lr*g ;  w <- w + mu*v - lr*g
    """
    if len(params) != len(grads):
        raise ShapeError(f"got {len(params)} params but {len(grads)} grads")
    velocity = state.velocity or [np.zeros_like(p) for p in params]
    if len(velocity) != len(params):
        raise ShapeError(f"got {len(params)} params but {len(velocity)} velocity buffers")
    lr, mu = state.learning_rate, state.momentum
    new_params, new_vel = [], []
    for i, (w, g, v) in enumerate(zip(params, grads, velocity)):
        if not (np.shape(w) == np.shape(g) == np.shape(v)):
            raise ShapeError(
                f"param {i}: shapes differ (param {np.shape(w)}, grad {np.shape(g)}, velocity {np.shape(v)})"
            )
        v2 = mu * v - lr * g
        new_vel.append(v2)
        new_params.append(w + mu * v2 - lr * g)
    return new_params, OptimizerState(lr, mu, new_vel)


class NesterovSGD:
    """In-place Nesterov SGD over a list of tensors.

    Tensors with ``requires_grad`` False are skipped, which is how block
    freezing is honoured.
    """

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.state = OptimizerState(lr, momentum, [np.zeros_like(p.data) for p in self.params])
        self.weight_decay = weight_decay

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        lr, mu = self.state.learning_rate, self.state.momentum
        for p, v in zip(self.params, self.state.velocity):
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ShapeError(f"grad shape {g.shape} does not match param shape {p.data.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= mu
            v -= lr * g
            p.data = p.data + mu * v - lr * g


def step_decay_lr(epoch: int, base_lr: float, milestones: Sequence[int], factor: float = 0.1) -> float:
    """``base_lr * factor ** (number of milestones <= epoch)``."""
    ms = list(milestones)
    if any(b <= a for a, b in zip(ms, ms[1:])):
        raise ValueError(f"milestones must be strictly increasing, got {ms}")
    return base_lr * factor ** bisect_right(ms, epoch)


def scaled_milestones(total_epochs: int, fractions=(0.3, 0.6, 0.8)) -> list[int]:
    """Milestones at fixed fractions of a run, deduplicated and increasing."""
    out: list[int] = []
    for f in fractions:
        m = max(1, int(round(f * total_epochs)))
        if not out or m > out[-1]:
            out.append(m)
    return out

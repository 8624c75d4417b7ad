"""Comparison methods: labeled-only training and the Pi-model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._training import derive_seed, minibatches
from .data import Dataset, UnlabeledSet
from .diffcore import NesterovSGD, Tensor, cross_entropy, mean_all, mul, softmax
from .models import BlockNet, ModelState


@dataclass(frozen=True)
class RampSchedule:
    ramp_length: int = 80
    max_weight: float = 1.0

    def __post_init__(self):
        if self.ramp_length < 0 or self.max_weight < 0:
            raise ValueError(f"ramp_length and max_weight must be >= 0, got {self}")


def ramp_weight(epoch: int, schedule: RampSchedule) -> float:
    """Gaussian ramp-up ``w * exp(-5 (1 - min(epoch/L, 1))^2)``."""
    if schedule.ramp_length == 0:
        return schedule.max_weight
    x = min(epoch / schedule.ramp_length, 1.0)
    return schedule.max_weight * math.exp(-5.0 * (1.0 - x) ** 2)


def _prepare(model: BlockNet, theta0: ModelState | None, frozen_block_count: int, seed: int) -> None:
    if theta0 is not None:
        model.restore(theta0, backbone_only=True)
    model.swap_head(model.n_classes, derive_seed(seed, 1))
    model.set_trainable(min(frozen_block_count, len(model.blocks)))


def labeled_only_train(model: BlockNet, theta0: ModelState | None, labeled: Dataset, epochs: int,
                       lr: float = 0.1, frozen_block_count: int = 1, momentum: float = 0.9,
                       weight_decay: float = 0.0, steps_per_epoch: int = 1, seed: int = 0) -> list[float]:
    """Supervised training on the labeled set alone, full batch.

    Starts from ``theta0``'s backbone (when given) and a seeded fresh head,
    with the same block freezing as the semi-supervised runs. Returns the
    loss of every step.
    """
    if len(labeled) == 0:
        raise ValueError("labeled_only_train needs a non-empty labeled set")
    _prepare(model, theta0, frozen_block_count, seed)
    x0 = Tensor(model.frozen_prefix(labeled.features))
    start = model.frozen_blocks
    opt = NesterovSGD(model.trainable_parameters(), lr=lr, momentum=momentum, weight_decay=weight_decay)
    losses = []
    for _ in range(epochs * steps_per_epoch):
        opt.zero_grad()
        loss = cross_entropy(model.forward(x0, start=start), labeled.labels)
        loss.backward()
        opt.step()
        losses.append(loss.scalar)
    return losses


def consistency_loss(p1: Tensor, p2: Tensor) -> Tensor:
    """Mean squared difference between two probability tensors."""
    d = p1 - p2
    return mean_all(mul(d, d))


@dataclass
class PiModelResult:
    losses: list[float]
    consistency: list[float]
    snapshots: dict[int, ModelState] = field(default_factory=dict, repr=False)


def pi_model_train(model: BlockNet, theta0: ModelState | None, labeled: Dataset,
                   unlabeled: UnlabeledSet, noise_sigma: float = 0.05,
                   ramp: RampSchedule = RampSchedule(), epochs: int = 100, lr: float = 0.1,
                   momentum: float = 0.9, weight_decay: float = 0.0, batch_size: int = 100,
                   frozen_block_count: int = 1, snapshot_epochs: Sequence[int] = (),
                   seed: int = 0) -> PiModelResult:
    """Pi-model: labeled cross-entropy plus a ramped consistency penalty.

    Every step uses the full labeled set and one mini-batch of unlabeled
    inputs, each seen twice under independent Gaussian input noise. With an
    empty unlabeled set an epoch is a single labeled step. ``snapshots`` maps
    each requested epoch index to the state at the end of that epoch.
    """
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if len(labeled) == 0:
        raise ValueError("pi_model_train needs a non-empty labeled set")
    _prepare(model, theta0, frozen_block_count, seed)
    xl = Tensor(model.frozen_prefix(labeled.features))
    start = model.frozen_blocks
    opt = NesterovSGD(model.trainable_parameters(), lr=lr, momentum=momentum, weight_decay=weight_decay)
    rng = np.random.default_rng(derive_seed(seed, 5))
    xu = np.asarray(unlabeled.features, dtype=np.float64)
    wanted = set(snapshot_epochs)
    result = PiModelResult([], [])
    for epoch in range(epochs):
        w = ramp_weight(epoch, ramp)
        batches = list(minibatches(len(xu), batch_size, rng)) if len(xu) else [None]
        for idx in batches:
            opt.zero_grad()
            loss = cross_entropy(model.forward(xl, start=start), labeled.labels).tensor
            cons = 0.0
            if idx is not None and w > 0:
                xb = xu[idx]
                a = xb + rng.normal(0.0, noise_sigma, size=xb.shape) if noise_sigma else xb
                b = xb + rng.normal(0.0, noise_sigma, size=xb.shape) if noise_sigma else xb
                c = consistency_loss(softmax(model.forward(a)), softmax(model.forward(b)))
                cons = c.item()
                loss = loss + c * w
            loss.backward()
            opt.step()
            result.losses.append(loss.item())
            result.consistency.append(cons)
        if epoch in wanted:
            result.snapshots[epoch] = model.snapshot()
    return result

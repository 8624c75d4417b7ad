"""Rotation-prediction pretraining that produces the initial checkpoint."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._training import accuracy, derive_seed, minibatches
from .diffcore import NesterovSGD, Tensor, cross_entropy, scaled_milestones, step_decay_lr
from .models import BlockNet, ModelState, load_state, save_state

N_ROTATIONS = 4


@dataclass(frozen=True)
class RotationBatch:
    images: np.ndarray
    rotation_labels: np.ndarray


@dataclass(frozen=True)
class PretextCheckpoint:
    state: ModelState
    pretext_accuracy: float
    epochs_trained: int
    seed: int = 0
    losses: tuple[float, ...] = field(default=(), repr=False)

    def save(self, path) -> None:
        """Write ``<path>`` (binary state) and ``<path>.json`` (metadata)."""
        path = Path(path)
        save_state(self.state, path)
        meta = {
            "pretext_accuracy": self.pretext_accuracy,
            "epochs_trained": self.epochs_trained,
            "seed": self.seed,
        }
        Path(f"{path}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "PretextCheckpoint":
        meta = json.loads(Path(f"{path}.json").read_text())
        return cls(load_state(path), float(meta["pretext_accuracy"]), int(meta["epochs_trained"]),
                   int(meta.get("seed", 0)))


def make_rotation_batch(images: np.ndarray) -> RotationBatch:
    """Every image in all four orientations: entry ``4i+k`` is image ``i`` turned ``k`` times."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[2] != images.shape[3]:
        raise ValueError(f"expected square (B, C, H, W) images, got shape {images.shape}")
    out = np.stack([np.rot90(images, k, axes=(2, 3)) for k in range(N_ROTATIONS)], axis=1)
    b = len(images)
    return RotationBatch(out.reshape((4 * b,) + images.shape[1:]), np.tile(np.arange(4), b))


def rotation_accuracy(model: BlockNet, images: np.ndarray) -> float:
    batch = make_rotation_batch(images)
    return accuracy(model.predict_logits(batch.images), batch.rotation_labels)


def train_pretext(
    model: BlockNet,
    images: np.ndarray,
    epochs: int = 30,
    base_lr: float = 0.1,
    milestones=None,
    decay: float = 0.1,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    batch_size: int = 32,
    holdout: float | int = 0.1,
    seed: int = 0,
) -> PretextCheckpoint:
    """Train ``model`` (4-way head) to predict which rotation was applied.

    ``images`` are unlabeled (B, C, H, W) arrays; a ``holdout`` share of them
    (fraction or count) is kept aside to measure rotation accuracy.
    ``batch_size`` counts source images, each contributing four rotations.
    """
    if model.n_classes != N_ROTATIONS:
        raise ValueError(f"pretext model needs a {N_ROTATIONS}-way head, got {model.n_classes}")
    images = np.asarray(images, dtype=np.float64)
    n = len(images)
    n_hold = int(holdout) if holdout >= 1 else int(round(holdout * n))
    n_hold = min(max(n_hold, 1), n - 1)
    rng = np.random.default_rng(derive_seed(seed, 0x5EED))
    perm = rng.permutation(n)
    held, train = images[perm[:n_hold]], images[perm[n_hold:]]
    milestones = scaled_milestones(epochs) if milestones is None else list(milestones)

    model.set_trainable(0)
    opt = NesterovSGD(model.parameters(), lr=base_lr, momentum=momentum, weight_decay=weight_decay)
    losses = []
    for epoch in range(epochs):
        opt.lr = step_decay_lr(epoch, base_lr, milestones, decay)
        total, count = 0.0, 0
        for idx in minibatches(len(train), batch_size, rng):
            batch = make_rotation_batch(train[idx])
            opt.zero_grad()
            loss = cross_entropy(model.forward(Tensor(batch.images)), batch.rotation_labels)
            loss.backward()
            opt.step()
            total += loss.scalar * len(idx)
            count += len(idx)
        losses.append(total / count)
    return PretextCheckpoint(
        state=model.snapshot(),
        pretext_accuracy=rotation_accuracy(model, held),
        epochs_trained=epochs,
        seed=seed,
        losses=tuple(losses),
    )


def make_oriented_patterns(n: int, size: int = 12, seed: int = 0) -> np.ndarray:
    """Upright images whose orientation is unambiguous.

    Stripes fill only the top half and a bright bar marks the left edge, so
    each quarter turn yields a distinguishable picture.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    out = np.empty((n, 1, size, size))
    for i in range(n):
        period = rng.uniform(2.5, 4.5)
        phase = rng.uniform(0, 2 * np.pi)
        img = 0.5 + 0.5 * np.sin(2 * np.pi * yy / period + phase)
        img[size // 2 :, :] = 0.0
        img[:, : max(1, size // 6)] = 1.0
        out[i, 0] = img + rng.normal(0, 0.1, size=img.shape)
    return out

"""Alternating two-phase semi-supervised training.

Each cycle fits the head on the labeled set (phase one), pseudo-labels the
unlabeled set with it, then resets the backbone to the pretext checkpoint
and fits the pseudo-labels on a random share of the unlabeled set (phase
two). Phase one never sees pseudo-labels and phase two never sees the
labeled targets; the only traffic between them is pseudo-labels forward
and weights back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from ._training import accuracy, derive_seed, minibatches
from .data import Dataset, SemiSplit, UnlabeledSet, sample_subset
from .diffcore import NesterovSGD, Tensor, cross_entropy, kl_divergence, softmax_probs
from .models import BlockNet, ModelState

logger = logging.getLogger(__name__)


class PseudoMode(str, Enum):
    HARD = "hard"
    SOFT = "soft"


class ConfigError(ValueError):
    """Raised with every violated constraint of a configuration at once."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass(frozen=True)
class PseudoLabels:
    """Per-example targets keyed by id: class indices (HARD) or rows (SOFT)."""

    mode: PseudoMode
    ids: np.ndarray
    values: np.ndarray
    cycle: int = 0

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).copy()
        vals = np.asarray(self.values).copy()
        ids.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mode", PseudoMode(self.mode))
        object.__setattr__(self, "_pos", {int(i): p for p, i in enumerate(ids)})

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def entries(self) -> dict:
        return {int(i): (int(v) if self.mode is PseudoMode.HARD else v) for i, v in zip(self.ids, self.values)}

    def hard(self) -> np.ndarray:
        return self.values if self.mode is PseudoMode.HARD else np.argmax(self.values, axis=1)

    def targets_for(self, ids) -> np.ndarray:
        try:
            pos = [self._pos[int(i)] for i in ids]
        except KeyError as e:
            raise KeyError(f"no pseudo-label for example id {e.args[0]}") from None
        return self.values[np.asarray(pos, dtype=np.int64)]


@dataclass
class PredictionMemory:
    """Detached softmax rows from the previous epoch, aligned with ``ids``."""

    ids: np.ndarray
    probs: np.ndarray
    epoch: int


@dataclass(frozen=True)
class CycleConfig:
    num_cycles: int = 10
    final_full_cycles: int = 3
    phase1_epochs: int = 50
    phase2_epochs: int = 20
    lambda_temp: float = 0.0
    pseudo_mode: PseudoMode = PseudoMode.HARD
    subset_fraction: float = 2 / 3
    reinitialize: bool = True
    frozen_block_count: int = 1
    phase1_lr: float = 0.1
    phase1_momentum: float = 0.9
    phase2_lr: float = 0.05
    phase2_momentum: float = 0.9
    phase2_batch_size: int = 64
    weight_decay: float = 0.0
    input_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pseudo_mode", PseudoMode(self.pseudo_mode))
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        p = []
        if self.num_cycles < 1:
            p.append(f"num_cycles must be >= 1, got {self.num_cycles}")
        if not 1 <= self.final_full_cycles <= max(self.num_cycles, 1):
            p.append(f"final_full_cycles must be in [1, num_cycles={self.num_cycles}], got {self.final_full_cycles}")
        if self.phase1_epochs < 1:
            p.append(f"phase1_epochs must be >= 1, got {self.phase1_epochs}")
        if self.phase2_epochs < 1:
            p.append(f"phase2_epochs must be >= 1, got {self.phase2_epochs}")
        if self.lambda_temp < 0:
            p.append(f"lambda_temp must be >= 0, got {self.lambda_temp}")
        if not 0 < self.subset_fraction <= 1:
            p.append(f"subset_fraction must be in (0, 1], got {self.subset_fraction}")
        if self.frozen_block_count < 0:
            p.append(f"frozen_block_count must be >= 0, got {self.frozen_block_count}")
        for name in ("phase1_lr", "phase2_lr"):
            if getattr(self, name) <= 0:
                p.append(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("phase1_momentum", "phase2_momentum"):
            if not 0 <= getattr(self, name) < 1:
                p.append(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if self.phase2_batch_size < 1:
            p.append(f"phase2_batch_size must be >= 1, got {self.phase2_batch_size}")
        return p

    def is_full_cycle(self, cycle: int) -> bool:
        return cycle >= self.num_cycles - self.final_full_cycles


@dataclass(frozen=True)
class CycleReport:
    cycle: int
    test_accuracy: float
    labeled_accuracy: float
    switch_count: int | None
    loss_phase1: float
    loss_pseudo: float
    loss_temp: float
    n_active: int
    pseudo_accuracy: float = float("nan")


@dataclass
class PhaseTwoResult:
    loss_pseudo: float
    loss_temp: float
    memory: PredictionMemory | None = field(default=None, repr=False)


def phase_one(model: BlockNet, labeled: Dataset, epochs: int, lr: float,
              momentum: float = 0.9, weight_decay: float = 0.0) -> list[float]:
    """Fit only the head to the labeled set, full batch; the backbone is untouched.

    Returns the labeled loss before training followed by one value per epoch.
    """
    if len(labeled) == 0:
        raise ValueError("phase one needs a non-empty labeled set")
    previous = model.frozen_blocks
    model.freeze_backbone()
    try:
        feats = Tensor(model.features(labeled.features).data)
        y = labeled.labels
        opt = NesterovSGD(model.head_parameters(), lr=lr, momentum=momentum, weight_decay=weight_decay)
        history = [cross_entropy(model.head(feats), y).scalar]
        for _ in range(epochs):
            opt.zero_grad()
            loss = cross_entropy(model.head(feats), y)
            loss.backward()
            opt.step()
            history.append(cross_entropy(model.head(feats), y).scalar)
    finally:
        model.set_trainable(previous)
    return history


def assign_pseudo_labels(model: BlockNet, unlabeled: UnlabeledSet, mode=PseudoMode.HARD,
                         cycle: int = 0) -> PseudoLabels:
    """Label every unlabeled example with the model's prediction (argmax ties go low)."""
    mode = PseudoMode(mode)
    probs = softmax_probs(model.predict_logits(unlabeled.features))
    values = np.argmax(probs, axis=1) if mode is PseudoMode.HARD else probs
    return PseudoLabels(mode, unlabeled.ids, values, cycle)


def label_switch_count(prev: PseudoLabels, curr: PseudoLabels) -> int:
    """Number of ids whose (argmax) label differs between two assignments."""
    if set(prev.ids.tolist()) != set(curr.ids.tolist()):
        missing = sorted(set(prev.ids.tolist()) ^ set(curr.ids.tolist()))
        raise ValueError(f"pseudo-label id sets differ, e.g. ids {missing[:5]}")
    curr_hard = curr.hard()[[curr._pos[int(i)] for i in prev.ids]]
    return int(np.sum(prev.hard() != curr_hard))


def phase_two(model: BlockNet, theta0: ModelState, active: UnlabeledSet, pseudo: PseudoLabels,
              config: CycleConfig, cycle: int = 0) -> PhaseTwoResult:
    """Fit the pseudo-labels on ``active`` after (optionally) resetting to ``theta0``.

    Loss per batch is ``L_pseudo + lambda_temp * KL(p_prev || p_now)``; the
    KL term starts from the second epoch, once a previous prediction exists.
    """
    targets = pseudo.targets_for(active.ids)
    if config.reinitialize:
        model.restore(theta0, backbone_only=True)
        model.swap_head(model.n_classes, derive_seed(config.seed, 2, cycle))
    model.set_trainable(min(config.frozen_block_count, len(model.blocks)))
    start = model.frozen_blocks
    x0 = model.frozen_prefix(active.features)
    opt = NesterovSGD(model.trainable_parameters(), lr=config.phase2_lr,
                      momentum=config.phase2_momentum, weight_decay=config.weight_decay)
    rng = np.random.default_rng(derive_seed(config.seed, 3, cycle))
    memory: PredictionMemory | None = None
    loss_pseudo = loss_temp = float("nan")
    for epoch in range(config.phase2_epochs):
        probs = np.zeros((len(active), model.n_classes))
        sum_p = sum_t = 0.0
        for idx in minibatches(len(active), config.phase2_batch_size, rng):
            opt.zero_grad()
            xb = x0[idx]
            if config.input_noise:
                xb = xb + rng.normal(0.0, config.input_noise, size=xb.shape)
            logits = model.forward(Tensor(xb), start=start)
            lp = cross_entropy(logits, targets[idx])
            total = lp.tensor
            if memory is not None:
                lt = kl_divergence(memory.probs[idx], logits)
                sum_t += lt.scalar * len(idx)
                if config.lambda_temp > 0:
                    total = total + lt.tensor * config.lambda_temp
            total.backward()
            opt.step()
            probs[idx] = softmax_probs(logits)
            sum_p += lp.scalar * len(idx)
        loss_pseudo = sum_p / len(active)
        loss_temp = sum_t / len(active) if memory is not None else float("nan")
        memory = PredictionMemory(active.ids, probs, epoch)
    return PhaseTwoResult(loss_pseudo, loss_temp, memory)


def run_cycles(
    model: BlockNet,
    split: SemiSplit,
    theta0: ModelState,
    config: CycleConfig,
    eval_set: Dataset | None = None,
    on_cycle: Callable[[CycleReport, BlockNet], None] | None = None,
) -> list[CycleReport]:
    """Run the alternating optimisation and report after every cycle.

    ``model`` is reset to ``theta0``'s backbone with a fresh head first; its
    head width sets the number of classes. Test accuracy is measured on
    ``eval_set`` at the end of each cycle (after phase two).
    """
    if config.frozen_block_count > len(model.blocks):
        raise ConfigError([f"frozen_block_count {config.frozen_block_count} exceeds {len(model.blocks)} blocks"])
    if len(split.unlabeled) == 0:
        raise ValueError("run_cycles needs a non-empty unlabeled set")
    model.restore(theta0, backbone_only=True)
    model.swap_head(model.n_classes, derive_seed(config.seed, 1))
    model.set_trainable(min(config.frozen_block_count, len(model.blocks)))
    subset_rng = np.random.default_rng(derive_seed(config.seed, 4))
    truth = split.unlabeled_truth()
    reports: list[CycleReport] = []
    prev: PseudoLabels | None = None
    for cycle in range(config.num_cycles):
        h1 = phase_one(model, split.labeled, config.phase1_epochs, config.phase1_lr,
                       config.phase1_momentum, config.weight_decay)
        pseudo = assign_pseudo_labels(model, split.unlabeled, config.pseudo_mode, cycle)
        switches = None if prev is None else label_switch_count(prev, pseudo)
        if config.is_full_cycle(cycle):
            active = split.unlabeled
        else:
            active_idx, _ = sample_subset(len(split.unlabeled), config.subset_fraction, subset_rng)
            active = split.unlabeled.take(active_idx)
        p2 = phase_two(model, theta0, active, pseudo, config, cycle)
        test_acc = float("nan")
        if eval_set is not None:
            test_acc = accuracy(model.predict_logits(eval_set.features), eval_set.labels)
        report = CycleReport(
            cycle=cycle,
            test_accuracy=test_acc,
            labeled_accuracy=accuracy(model.predict_logits(split.labeled.features), split.labeled.labels),
            switch_count=switches,
            loss_phase1=h1[-1],
            loss_pseudo=p2.loss_pseudo,
            loss_temp=p2.loss_temp,
            n_active=len(active),
            pseudo_accuracy=float(np.mean(pseudo.hard() == truth)) if truth is not None else float("nan"),
        )
        logger.debug("cycle %d: %s", cycle, report)
        reports.append(report)
        if on_cycle is not None:
            on_cycle(report, model)
        prev = pseudo
    return reports

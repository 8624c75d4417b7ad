"""Drive one experiment config across its seeds and write the artifacts.

Layout of an output directory::

    metrics.csv            all seeds, in seed order
    summary.json           per-seed final accuracy, mean, std
    seeds/seed_<s>.csv     staged per-seed rows
    models/seed_<s>.ckpt   final classifier state
    pretext/seed_<s>_<key>.ckpt   rotation checkpoints (image datasets)
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .._training import accuracy, derive_seed
from ..baselines import RampSchedule, labeled_only_train, pi_model_train
from ..data import (Dataset, SemiSplit, TwoMoonsConfig, channel_stats, load_idx, make_two_moons,
                    normalize_images, semi_split)
from ..models import BlockNet, ModelState, build_network
from ..pretext import N_ROTATIONS, PretextCheckpoint, train_pretext
from ..ssl import run_cycles
from .config import ExperimentConfig, Method
from .metrics import MetricRow, RunSummary, atomic_write_text, emit_metrics_csv, format_rows

logger = logging.getLogger(__name__)

# stream tags for derive_seed
_TRAIN_DATA, _TEST_DATA, _SPLIT, _INIT, _PRETEXT = 100, 101, 102, 103, 104


@dataclass(frozen=True)
class ExperimentData:
    train: Dataset
    test: Dataset


@dataclass
class SeedResult:
    seed: int
    rows: list[MetricRow]
    model: BlockNet
    split: SemiSplit


def load_data(config: ExperimentConfig, seed: int) -> ExperimentData:
    """Train/test data for one seed; two-moons samples are redrawn per seed."""
    d = config.dataset
    if d.kind == "two_moons":
        train = make_two_moons(TwoMoonsConfig(d.n_per_class, d.noise, seed=derive_seed(seed, _TRAIN_DATA)))
        test = make_two_moons(TwoMoonsConfig(d.test_n_per_class, d.noise, seed=derive_seed(seed, _TEST_DATA)))
        return ExperimentData(train, test)
    train = load_idx(config.resolve(d.train_images), config.resolve(d.train_labels))
    test = load_idx(config.resolve(d.test_images), config.resolve(d.test_labels))
    if d.train_limit:
        train = train.take(np.arange(min(d.train_limit, len(train))))
    if d.test_limit:
        test = test.take(np.arange(min(d.test_limit, len(test))))
    if d.normalize:
        mean, std = channel_stats(train.features)
        train = Dataset(normalize_images(train.features, mean, std), train.labels, train.ids)
        test = Dataset(normalize_images(test.features, mean, std), test.labels, test.ids)
    return ExperimentData(train, test)


def _pretext_key(config: ExperimentConfig) -> str:
    blob = json.dumps([asdict(config.pretext), asdict(config.dataset), asdict(config.model)], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:10]


def pretext_path(config: ExperimentConfig, out_dir, seed: int) -> Path:
    return Path(out_dir) / "pretext" / f"seed_{seed}_{_pretext_key(config)}.ckpt"


def obtain_pretext(config: ExperimentConfig, data: ExperimentData, seed: int, out_dir=None) -> PretextCheckpoint:
    """Load the cached rotation checkpoint for this seed or train and cache it.

    Pretext training sees every training image, labeled or not.
    """
    path = pretext_path(config, out_dir, seed) if out_dir is not None else None
    if path is not None and path.exists():
        return PretextCheckpoint.load(path)
    p = config.pretext
    net = build_network(data.train.features, N_ROTATIONS, config.model.hidden_dims, config.model.channels,
                        seed=derive_seed(seed, _INIT))
    ckpt = train_pretext(net, data.train.features, epochs=p.epochs, base_lr=p.lr, momentum=p.momentum,
                         weight_decay=p.weight_decay, batch_size=p.batch_size, holdout=p.holdout,
                         seed=derive_seed(seed, _PRETEXT))
    logger.info("seed %d: rotation accuracy %.3f", seed, ckpt.pretext_accuracy)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        ckpt.save(path)
    return ckpt


def prepare_seed(config: ExperimentConfig, seed: int) -> tuple[ExperimentData, SemiSplit, BlockNet]:
    """Data, labeled/unlabeled split and freshly initialised classifier for one seed."""
    data = load_data(config, seed)
    split = semi_split(data.train, config.labels_per_class, derive_seed(seed, _SPLIT))
    model = build_network(data.train.features, len(data.train.classes), config.model.hidden_dims,
                          config.model.channels, seed=derive_seed(seed, _INIT))
    return data, split, model


def run_seed(config: ExperimentConfig, seed: int, out_dir=None, theta0: ModelState | None = None) -> SeedResult:
    """Split, obtain the starting weights, train with the configured method, evaluate."""
    data, split, model = prepare_seed(config, seed)
    if theta0 is None:
        if config.pretext.enabled:
            theta0 = obtain_pretext(config, data, seed, out_dir).state
        else:
            theta0 = model.snapshot()

    test = data.test
    rows: list[MetricRow] = []
    if config.method is Method.OURS:
        reports = run_cycles(model, split, theta0, config.cycle_config(seed), eval_set=test)
        rows = [MetricRow(seed, r.cycle, r.test_accuracy, r.labeled_accuracy, r.switch_count,
                          r.loss_pseudo, r.loss_temp) for r in reports]
    elif config.method is Method.LABELED_ONLY:
        lo = config.labeled_only
        labeled_only_train(model, theta0, split.labeled, lo.epochs, lr=lo.lr,
                           frozen_block_count=lo.frozen_block_count, momentum=lo.momentum,
                           weight_decay=lo.weight_decay, seed=seed)
        rows = [_eval_row(model, seed, 0, split, test)]
    else:
        pi = config.pi_model
        eval_epochs = sorted({e for e in pi.eval_epochs if 0 <= e < pi.epochs} | {pi.epochs - 1})
        result = pi_model_train(model, theta0, split.labeled, split.unlabeled, noise_sigma=pi.noise_sigma,
                                ramp=RampSchedule(pi.ramp_length, pi.max_weight), epochs=pi.epochs,
                                lr=pi.lr, momentum=pi.momentum, weight_decay=pi.weight_decay,
                                batch_size=pi.batch_size, frozen_block_count=pi.frozen_block_count,
                                snapshot_epochs=eval_epochs, seed=seed)
        final = model.snapshot()
        for epoch in eval_epochs:
            model.restore(result.snapshots[epoch])
            rows.append(_eval_row(model, seed, epoch, split, test))
        model.restore(final)
    return SeedResult(seed, rows, model, split)


def _eval_row(model: BlockNet, seed: int, cycle: int, split: SemiSplit, test: Dataset) -> MetricRow:
    return MetricRow(seed, cycle,
                     accuracy(model.predict_logits(test.features), test.labels),
                     accuracy(model.predict_logits(split.labeled.features), split.labeled.labels))


def _run_and_stage(config: ExperimentConfig, seed: int, out_dir) -> list[MetricRow]:
    res = run_seed(config, seed, out_dir)
    if out_dir is not None:
        out = Path(out_dir)
        atomic_write_text(out / "seeds" / f"seed_{seed}.csv", format_rows(res.rows))
        (out / "models").mkdir(parents=True, exist_ok=True)
        res.model.snapshot().save(out / "models" / f"seed_{seed}.ckpt")
    return res.rows


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunSummary:
    """Run every seed (in parallel when ``n_jobs > 1``) and assemble the summary.

    With ``out_dir`` each seed stages its rows separately; ``metrics.csv`` is
    then written in seed order, so it does not depend on completion order.
    """
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    seeds = list(config.seeds)
    if config.n_jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(config.n_jobs, len(seeds))) as pool:
            per_seed = list(pool.map(_run_and_stage, [config] * len(seeds), seeds, [out_dir] * len(seeds)))
    else:
        per_seed = [_run_and_stage(config, s, out_dir) for s in seeds]
    if out_dir is not None:
        per_seed = [read_metric_rows_staged(Path(out_dir) / "seeds" / f"seed_{s}.csv") for s in seeds]
    summary = RunSummary(config.name, config.method.value, tuple(r for rows in per_seed for r in rows))
    if out_dir is not None:
        emit_metrics_csv(summary, Path(out_dir) / "metrics.csv")
        atomic_write_text(Path(out_dir) / "summary.json", json.dumps(summary.to_dict(), indent=2) + "\n")
    return summary


def read_metric_rows_staged(path) -> list[MetricRow]:
    return [MetricRow.from_csv(line) for line in Path(path).read_text().splitlines() if line]


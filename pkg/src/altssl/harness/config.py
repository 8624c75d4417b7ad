"""Experiment configuration files (YAML).

Example::

    name: moons-ours
    method: ours            # ours | pi_model | labeled_only
    seeds: [0, 1, 2]
    labels_per_class: 1
    dataset:
      kind: two_moons       # or: idx
      n_per_class: 500
      noise: 0.1
    model:
      hidden_dims: [16, 16]
    ssl:
      num_cycles: 10
      final_full_cycles: 3

Relative dataset paths resolve against the directory holding the file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from ..ssl import ConfigError, CycleConfig


class Method(str, Enum):
    OURS = "ours"
    PI_MODEL = "pi_model"
    LABELED_ONLY = "labeled_only"


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "two_moons"
    n_per_class: int = 500
    noise: float = 0.1
    test_n_per_class: int = 500
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_limit: int | None = None
    test_limit: int | None = None
    normalize: bool = True


@dataclass(frozen=True)
class ModelSpec:
    hidden_dims: tuple[int, ...] = (16, 16)
    channels: tuple[int, ...] = (8, 16)


@dataclass(frozen=True)
class PretextSpec:
    enabled: bool = False
    epochs: int = 30
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    holdout: float = 0.1


@dataclass(frozen=True)
class LabeledOnlySpec:
    epochs: int = 50
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    frozen_block_count: int = 1


@dataclass(frozen=True)
class PiModelSpec:
    epochs: int = 100
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 100
    noise_sigma: float = 0.05
    ramp_length: int = 80
    max_weight: float = 1.0
    frozen_block_count: int = 1
    eval_epochs: tuple[int, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    method: Method = Method.OURS
    seeds: tuple[int, ...] = (0,)
    labels_per_class: int = 1
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    pretext: PretextSpec = field(default_factory=PretextSpec)
    ssl: dict = field(default_factory=dict)
    labeled_only: LabeledOnlySpec = field(default_factory=LabeledOnlySpec)
    pi_model: PiModelSpec = field(default_factory=PiModelSpec)
    output: str | None = None
    n_jobs: int = 1
    base_dir: str = "."

    def cycle_config(self, seed: int) -> CycleConfig:
        return CycleConfig(**{**self.ssl, "seed": seed})

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return _replace(self, seeds=tuple(int(s) for s in seeds))


def _replace(cfg, **changes):
    from dataclasses import replace

    return replace(cfg, **changes)


def _build_section(cls, raw: Any, where: str, problems: list[str]):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        problems.append(f"{where}: expected a mapping, got {type(raw).__name__}")
        return cls()
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            problems.append(f"{where}: unknown key {key!r}")
            continue
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        problems.append(f"{where}: {e}")
        return cls()


def parse_config(raw: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    """Build and validate a config; every problem found is reported at once."""
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    top = {f.name for f in fields(ExperimentConfig)} - {"base_dir"}
    for key in raw:
        if key not in top:
            problems.append(f"unknown top-level key {key!r}")

    method = raw.get("method", "ours")
    try:
        method = Method(str(method).lower())
    except ValueError:
        problems.append(f"method must be one of {[m.value for m in Method]}, got {method!r}")
        method = Method.OURS

    seeds = raw.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        problems.append(f"seeds must be a non-empty list of integers, got {seeds!r}")
        seeds = [0]
    elif len(set(seeds)) != len(seeds):
        problems.append(f"seeds must be distinct, got {seeds}")

    lpc = raw.get("labels_per_class", 1)
    if not isinstance(lpc, int) or lpc < 1:
        problems.append(f"labels_per_class must be a positive integer, got {lpc!r}")
        lpc = 1

    dataset = _build_section(DatasetSpec, raw.get("dataset"), "dataset", problems)
    model = _build_section(ModelSpec, raw.get("model"), "model", problems)
    pretext = _build_section(PretextSpec, raw.get("pretext"), "pretext", problems)
    lo = _build_section(LabeledOnlySpec, raw.get("labeled_only"), "labeled_only", problems)
    pi = _build_section(PiModelSpec, raw.get("pi_model"), "pi_model", problems)

    ssl = raw.get("ssl") or {}
    if not isinstance(ssl, dict):
        problems.append("ssl: expected a mapping")
        ssl = {}
    else:
        known = {f.name for f in fields(CycleConfig)} - {"seed"}
        for key in list(ssl):
            if key not in known:
                problems.append(f"ssl: unknown key {key!r}")
                ssl.pop(key)
        try:
            CycleConfig(**ssl)
        except ConfigError as e:
            problems.extend(f"ssl: {p}" for p in e.problems)
        except TypeError as e:
            problems.append(f"ssl: {e}")

    if dataset.kind not in ("two_moons", "idx"):
        problems.append(f"dataset.kind must be 'two_moons' or 'idx', got {dataset.kind!r}")
    if dataset.kind == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(dataset, key):
                problems.append(f"dataset.{key} is required for idx datasets")
    if pretext.enabled and dataset.kind != "idx":
        problems.append("pretext.enabled needs image data; two-moons runs start from a seeded random init")
    if method is Method.OURS and "ssl" not in raw:
        problems.append("method 'ours' needs an ssl section")
    if method is Method.PI_MODEL and "pi_model" not in raw:
        problems.append("method 'pi_model' needs a pi_model section")
    if method is Method.LABELED_ONLY and "labeled_only" not in raw:
        problems.append("method 'labeled_only' needs a labeled_only section")
    n_jobs = raw.get("n_jobs", 1)
    if not isinstance(n_jobs, int) or n_jobs < 1:
        problems.append(f"n_jobs must be a positive integer, got {n_jobs!r}")
        n_jobs = 1

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        name=str(raw.get("name", "experiment")),
        method=method,
        seeds=tuple(seeds),
        labels_per_class=lpc,
        dataset=dataset,
        model=model,
        pretext=pretext,
        ssl=dict(ssl),
        labeled_only=lo,
        pi_model=pi,
        output=raw.get("output"),
        n_jobs=n_jobs,
        base_dir=str(base_dir),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as e:
        raise OSError(f"cannot read config {path}: {e.strerror}") from e
    return parse_config(raw, base_dir=path.parent)

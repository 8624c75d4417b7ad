"""Datasets: two moons, IDX files, synthetic digits, and semi-supervised splits."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNLABELED = -1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable examples: ``features[i]`` has label ``labels[i]`` and id ``ids[i]``."""

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        ids = np.arange(len(feats)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if not (len(feats) == len(labels) == len(ids)):
            raise ValueError(
                f"features, labels and ids differ in length: {len(feats)}, {len(labels)}, {len(ids)}"
            )
        if len(np.unique(ids)) != len(ids):
            raise ValueError("example ids must be unique")
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "ids", _frozen(ids))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels[self.labels != UNLABELED])

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.ids[idx])


@dataclass(frozen=True)
class UnlabeledSet:
    """What training code gets to see of unlabeled data: features and ids only."""

    features: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, idx) -> "UnlabeledSet":
        idx = np.asarray(idx, dtype=np.int64)
        return UnlabeledSet(self.features[idx], self.ids[idx])


@dataclass(frozen=True)
class SemiSplit:
    labeled: Dataset
    unlabeled: UnlabeledSet
    labels_per_class: int
    seed: int
    _hidden_labels: np.ndarray = field(repr=False, default=None)

    def unlabeled_truth(self) -> np.ndarray:
        """Ground truth of the unlabeled part, for evaluation and diagnostics only."""
        return self._hidden_labels

    @property
    def n_classes(self) -> int:
        return int(len(self.labeled.classes))


@dataclass(frozen=True)
class TwoMoonsConfig:
    n_per_class: int = 500
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError(f"n_per_class must be >= 1, got {self.n_per_class}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def make_two_moons(config: TwoMoonsConfig) -> Dataset:
    """Class 0 on the upper unit half-circle, class 1 on the shifted lower one."""
    rng = np.random.default_rng(config.seed)
    n = config.n_per_class
    t0 = rng.uniform(0.0, np.pi, n)
    t1 = rng.uniform(0.0, np.pi, n)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower])
    if config.noise_sigma > 0:
        x = x + rng.normal(0.0, config.noise_sigma, size=x.shape)
    y = np.repeat([0, 1], n)
    return Dataset(x, y)


# IDX ------------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    with _open(path) as fh:
        buf = fh.read()
    if len(buf) < 16:
        raise IDXFormatError(f"{path}: file too short for an image header ({len(buf)} bytes)")
    magic, n, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IDXFormatError(f"{path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    body = buf[16:]
    if len(body) != n * rows * cols:
        raise IDXFormatError(
            f"{path}: header promises {n}x{rows}x{cols}={n * rows * cols} pixels, found {len(body)}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as fh:
        buf = fh.read()
    if len(buf) < 8:
        raise IDXFormatError(f"{path}: file too short for a label header ({len(buf)} bytes)")
    magic, n = struct.unpack(">II", buf[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IDXFormatError(f"{path}: bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    body = buf[8:]
    if len(body) != n:
        raise IDXFormatError(f"{path}: header promises {n} labels, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair; pixels scaled to [0, 1], shape (N, 1, H, W)."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IDXFormatError(f"image count {len(images)} does not match label count {len(labels)}")
    return Dataset(images[:, None, :, :].astype(np.float64) / 255.0, labels)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValueError(f"images must be uint8 (N, H, W), got {images.dtype} {images.shape}")
    if labels.ndim != 1 or len(labels) != len(images):
        raise ValueError(f"labels must be 1-D with {len(images)} entries, got shape {labels.shape}")
    if np.any((labels < 0) | (labels > 255)):
        raise ValueError("labels must fit in one byte")
    n, r, c = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, r, c) + images.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, n) + labels.astype(np.uint8).tobytes()
    )


# splitting ------------------------------------------------------------

def semi_split(dataset: Dataset, labels_per_class: int, seed: int) -> SemiSplit:
    """Stratified uniform choice of ``labels_per_class`` labeled examples per class."""
    if labels_per_class < 1:
        raise ValueError(f"labels_per_class must be >= 1, got {labels_per_class}")
    rng = np.random.default_rng(seed)
    chosen = []
    for cls in dataset.classes:
        members = np.flatnonzero(dataset.labels == cls)
        if len(members) < labels_per_class:
            raise ValueError(
                f"class {int(cls)} has {len(members)} examples, fewer than labels_per_class={labels_per_class}"
            )
        chosen.append(rng.choice(members, size=labels_per_class, replace=False))
    lab_idx = np.sort(np.concatenate(chosen))
    mask = np.ones(len(dataset), dtype=bool)
    mask[lab_idx] = False
    unl_idx = np.flatnonzero(mask)
    unl = dataset.take(unl_idx)
    return SemiSplit(
        labeled=dataset.take(lab_idx),
        unlabeled=UnlabeledSet(unl.features, unl.ids),
        labels_per_class=labels_per_class,
        seed=seed,
        _hidden_labels=unl.labels,
    )


def sample_subset(n_or_set, fraction: float, rng: np.random.Generator):
    """Pick ``floor(fraction * N)`` positions uniformly without replacement.

    Returns ``(active, held_out)`` as sorted position arrays into the set.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = n_or_set if isinstance(n_or_set, (int, np.integer)) else len(n_or_set)
    if n == 0:
        raise ValueError("cannot sample a subset of an empty unlabeled set")
    m = int(np.floor(fraction * n + 1e-12))
    if fraction == 1:
        return np.arange(n), np.arange(0)
    perm = rng.permutation(n)
    return np.sort(perm[:m]), np.sort(perm[m:])


# images ---------------------------------------------------------------

def rotate90(image: np.ndarray, k: int) -> np.ndarray:
    """Rotate a (C, H, W) image counterclockwise by ``k`` quarter turns."""
    if k not in (0, 1, 2, 3):
        raise ValueError(f"k must be one of 0..3, got {k}")
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {image.shape}")
    if k % 2 and image.shape[1] != image.shape[2]:
        raise ValueError(f"odd quarter turns need square images, got {image.shape[1:]}")
    return np.rot90(image, k, axes=(1, 2)).copy()


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = images.mean(axis=(0, 2, 3))
    std = images.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def normalize_images(images: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (images - mean[None, :, None, None]) / std[None, :, None, None]


# synthetic digits -----------------------------------------------------

def _arc(cx, cy, rx, ry, a0, a1, n=12):
    a = np.linspace(np.radians(a0), np.radians(a1), n)
    return np.stack([cx + rx * np.cos(a), cy + ry * np.sin(a)], axis=1)


def _line(*pts):
    return np.asarray(pts, dtype=np.float64)


# unit-box coordinates, y pointing down
_DIGIT_STROKES = {
    0: [_arc(0.5, 0.5, 0.28, 0.4, 0, 360, 20)],
    1: [_line((0.36, 0.25), (0.52, 0.1), (0.52, 0.9))],
    2: [np.vstack([_arc(0.5, 0.32, 0.25, 0.22, 190, 370), _line((0.72, 0.4), (0.25, 0.9), (0.78, 0.9))])],
    3: [_arc(0.48, 0.3, 0.24, 0.2, 200, 450), _arc(0.48, 0.7, 0.27, 0.2, 270, 520)],
    4: [_line((0.62, 0.1), (0.2, 0.65), (0.82, 0.65)), _line((0.62, 0.1), (0.62, 0.9))],
    5: [np.vstack([_line((0.76, 0.1), (0.32, 0.1), (0.3, 0.46)), _arc(0.48, 0.66, 0.27, 0.23, 215, 500)])],
    6: [np.vstack([_arc(0.72, 0.62, 0.45, 0.52, 250, 180, 8), _arc(0.5, 0.68, 0.23, 0.21, 180, 540, 16)])],
    7: [_line((0.2, 0.1), (0.8, 0.1), (0.42, 0.9))],
    8: [_arc(0.5, 0.3, 0.2, 0.2, 0, 360, 16), _arc(0.5, 0.7, 0.25, 0.2, 0, 360, 16)],
    9: [np.vstack([_arc(0.5, 0.32, 0.23, 0.21, 0, 360, 16), _arc(0.28, 0.38, 0.45, 0.52, 0, 70, 8)])],
}


def _segments(strokes) -> np.ndarray:
    segs = [np.stack([s[:-1], s[1:]], axis=1) for s in strokes]
    return np.concatenate(segs)


def _render(segs: np.ndarray, size: int, thickness: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    p = np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1)[:, None, :]
    a, b = segs[None, :, 0, :], segs[None, :, 1, :]
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-12)
    t = np.clip(((p - a) * ab).sum(-1) / denom, 0.0, 1.0)
    d = np.linalg.norm(p - (a + t[..., None] * ab), axis=-1).min(axis=1)
    return np.clip(1.0 - np.maximum(d - thickness, 0.0), 0.0, 1.0).reshape(size, size)


def make_synthetic_digits(n: int, seed: int, size: int = 28) -> tuple[np.ndarray, np.ndarray]:
    """Handwriting-like digit images from jittered stroke skeletons.

    Returns ``(images uint8 (n, size, size), labels int64 (n,))`` with classes
    balanced up to remainder.
    """
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 10)
    images = np.empty((n, size, size), dtype=np.uint8)
    box = 0.72 * size
    for i, digit in enumerate(labels):
        segs = _segments(_DIGIT_STROKES[int(digit)]) - 0.5
        segs = segs + rng.normal(0.0, 0.045, size=segs.shape)
        ang = np.radians(rng.uniform(-22, 22))
        scale = rng.uniform(0.7, 1.1, size=2)
        shear = rng.uniform(-0.35, 0.35)
        mat = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]]) * scale
        mat = mat @ np.array([[1.0, shear], [0.0, 1.0]])
        shift = rng.uniform(-0.12, 0.12, size=2)
        segs = (segs @ mat.T + shift + 0.5) * box + (size - box) / 2
        # a short stray stroke somewhere in the frame
        a = rng.uniform(2, size - 2, size=2)
        stray = np.stack([a, a + rng.normal(0, 4, size=2)])[None]
        img = np.maximum(_render(segs, size, rng.uniform(0.4, 1.6)), 0.7 * _render(stray, size, 0.5))
        img = np.clip(img + rng.normal(0.0, 0.15, size=img.shape), 0.0, 1.0)
        images[i] = np.round(img * 255).astype(np.uint8)
    return images, labels.astype(np.int64)

"""Decision-boundary rasters written as binary PPM (P6) images."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..data import Dataset, SemiSplit, UnlabeledSet
from ..models import BlockNet

SATURATED = np.array([
    (220, 30, 30), (30, 80, 220), (20, 160, 60), (230, 150, 0), (150, 40, 190),
    (0, 170, 180), (200, 40, 140), (120, 120, 0), (90, 60, 30), (40, 40, 40),
], dtype=np.uint8)
UNLABELED_GRAY = np.array((128, 128, 128), dtype=np.uint8)
MARGIN = 0.1


def _pale(colors: np.ndarray) -> np.ndarray:
    return np.round(0.3 * colors.astype(np.float64) + 0.7 * 255.0).astype(np.uint8)


def _predictor(model):
    if isinstance(model, BlockNet):
        return lambda X: np.argmax(model.predict_logits(X), axis=1)
    if hasattr(model, "predict"):
        classes = getattr(model, "classes_", None)

        def predict(X):
            y = np.asarray(model.predict(X))
            return np.searchsorted(classes, y) if classes is not None else y.astype(np.int64)

        return predict
    if callable(model):
        def predict(X):
            out = np.asarray(model(X))
            return np.argmax(out, axis=1) if out.ndim == 2 else out.astype(np.int64)

        return predict
    raise TypeError(f"cannot predict with {type(model).__name__}")


def _points(data):
    """(all, labeled, labeled classes, unlabeled) from the accepted dataset forms."""
    if isinstance(data, SemiSplit):
        lab, unl = data.labeled, data.unlabeled
        return np.concatenate([lab.features, unl.features]), lab.features, lab.labels, unl.features
    if isinstance(data, Dataset):
        return data.features, data.features, data.labels, np.empty((0, data.features.shape[1]))
    if isinstance(data, UnlabeledSet):
        return data.features, np.empty((0, data.features.shape[1])), np.empty(0, np.int64), data.features
    X = np.asarray(data, dtype=np.float64)
    return X, np.empty((0,) + X.shape[1:]), np.empty(0, np.int64), X


def grid_extent(X: np.ndarray) -> tuple[float, float, float, float]:
    """Bounding box of ``X`` widened by 10% of its span on each side."""
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - MARGIN * span, hi + MARGIN * span
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def pixel_centers(extent, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """x per column (left to right) and y per row (top to bottom)."""
    x0, x1, y0, y1 = extent
    xs = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    ys = y1 - (np.arange(resolution) + 0.5) * (y1 - y0) / resolution
    return xs, ys


def render_boundary(model, data, grid_resolution: int = 200) -> np.ndarray:
    """RGB uint8 image (R, R, 3) of the predicted class over the padded bounding box."""
    X, lab_x, lab_y, unl_x = _points(data)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"decision boundaries need 2-D features, got shape {X.shape}")
    if grid_resolution < 2:
        raise ValueError(f"grid_resolution must be >= 2, got {grid_resolution}")
    res = int(grid_resolution)
    extent = grid_extent(X)
    xs, ys = pixel_centers(extent, res)
    gx, gy = np.meshgrid(xs, ys)
    cls = _predictor(model)(np.stack([gx.ravel(), gy.ravel()], axis=1)).reshape(res, res)
    img = _pale(SATURATED)[cls % len(SATURATED)]

    x0, x1, y0, y1 = extent

    def to_pixel(P):
        col = np.floor((P[:, 0] - x0) / (x1 - x0) * res).astype(np.int64)
        row = np.floor((y1 - P[:, 1]) / (y1 - y0) * res).astype(np.int64)
        return np.clip(row, 0, res - 1), np.clip(col, 0, res - 1)

    r, c = to_pixel(unl_x)
    img[r, c] = UNLABELED_GRAY
    r, c = to_pixel(lab_x)
    for rr, cc, k in zip(r, c, lab_y):
        img[max(rr - 2, 0) : rr + 3, max(cc - 2, 0) : cc + 3] = SATURATED[int(k) % len(SATURATED)]
    return img


def write_ppm(image: np.ndarray, path) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected a uint8 (H, W, 3) image, got {image.dtype} {image.shape}")
    h, w, _ = image.shape
    path = Path(path)
    try:
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + image.tobytes())
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror}") from e


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(buf) and not buf[end : end + 1].isspace():
            end += 1
        if end == pos:
            raise ValueError(f"{path}: truncated PPM header")
        fields.append(buf[pos:end])
        pos = end
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(fields[1]), int(fields[2])
    body = buf[pos + 1 :]
    if len(body) != w * h * 3:
        raise ValueError(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def plot_decision_boundary(model, dataset_2d, grid_resolution: int = 200, path=None) -> np.ndarray:
    """Rasterise ``model``'s argmax class and overlay the data; write to ``path`` if given.

    ``model`` may be a :class:`BlockNet`, a fitted classifier with ``predict``,
    or a callable returning logits or class indices. ``dataset_2d`` may be a
    :class:`SemiSplit` (labeled points drawn as coloured squares, unlabeled
    ones as gray dots), a :class:`Dataset` (all points labeled) or a bare array
    (all points unlabeled).
    """
    img = render_boundary(model, dataset_2d, grid_resolution)
    if path is not None:
        write_ppm(img, path)
    return img

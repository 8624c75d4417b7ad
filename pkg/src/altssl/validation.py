"""Input validation for the estimator API.

Semi-supervised targets follow the scikit-learn convention: ``-1`` marks an
unlabeled sample.
"""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .data import UNLABELED


def check_features(X) -> np.ndarray:
    """Return ``X`` as float64 with shape (n, d) or (n, C, H, W).

    A 3-D array is read as single-channel images and gains a channel axis.
    """
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=True)
    if X.ndim == 3:
        X = X[:, None, :, :]
    if X.ndim not in (2, 4):
        raise ValueError(f"expected 2-D vectors or 4-D (N, C, H, W) images, got shape {X.shape}")
    return X


def check_semi_supervised(X, y):
    """Validate a partially labeled training set.

    Returns
    -------
    X : ndarray
    y_encoded : ndarray of int
        Class indices in ``[0, n_classes)``, ``-1`` where unlabeled.
    classes : ndarray
        Sorted original labels seen among labeled samples.
    """
    X = check_features(X)
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(X):
        raise ValueError(f"y must be 1-D with {len(X)} entries, got shape {y.shape}")
    labeled = y != UNLABELED
    if not labeled.any():
        raise ValueError("at least one sample must be labeled (y != -1)")
    classes = np.unique(y[labeled])
    if len(classes) < 2:
        raise ValueError(f"need at least 2 labeled classes, got {classes.tolist()}")
    y_enc = np.full(len(y), UNLABELED, dtype=np.int64)
    y_enc[labeled] = np.searchsorted(classes, y[labeled])
    return X, y_enc, classes


def check_matching_input(X, input_shape: tuple[int, ...]) -> np.ndarray:
    X = check_features(X)
    if tuple(X.shape[1:]) != tuple(input_shape):
        raise ValueError(f"X has sample shape {X.shape[1:]}, estimator was fitted on {tuple(input_shape)}")
    return X

"""Small helpers shared by the training loops."""

from __future__ import annotations

import numpy as np


def derive_seed(*parts: int) -> int:
    """Deterministic 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def minibatches(n: int, batch_size: int | None, rng: np.random.Generator | None):
    """Yield index arrays covering ``range(n)``; shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    if not batch_size or batch_size >= n:
        yield order
        return
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits, axis=1) == labels))

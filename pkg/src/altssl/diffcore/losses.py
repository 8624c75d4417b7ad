"""Loss functions returning a :class:`LossValue`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, _make, log_softmax_array, softmax_array

ROW_SUM_TOL = 1e-6


@dataclass
class LossValue:
    """A scalar loss node plus the named float components it was built from."""

    tensor: Tensor
    components: dict[str, float] = field(default_factory=dict)

    @property
    def scalar(self) -> float:
        return self.tensor.item()

    def backward(self) -> None:
        self.tensor.backward()

    def __float__(self) -> float:
        return self.scalar


def _check_distributions(p: np.ndarray, k: int, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != k:
        raise ShapeError(f"{name}: expected shape (B, {k}), got {p.shape}")
    if np.any(p < 0):
        raise ValueError(f"{name}: distributions must be nonnegative")
    sums = p.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        raise ValueError(
            f"{name}: row {int(bad[0])} sums to {sums[bad[0]]!r}, expected 1 +/- {ROW_SUM_TOL}"
        )
    return p


def _soft_ce(logits: Tensor, target: np.ndarray) -> Tensor:
    """mean_b -sum_k t_bk log_softmax(z)_bk, fused for a cheap gradient."""
    b = logits.shape[0]
    logp = log_softmax_array(logits.data)
    value = -(target * logp).sum() / b

    def backward(g):
        p = np.exp(logp)
        # d/dz of -sum t log_softmax(z) is p * sum(t) - t
        return ((logits, g * (p * target.sum(axis=1, keepdims=True) - target) / b),)

    return _make(np.asarray(value), (logits,), backward, "cross_entropy")


def cross_entropy(logits: Tensor, target) -> LossValue:
    """Batch-mean cross-entropy against hard class indices or soft rows.

    Integer-typed 1-D targets are class indices; 2-D float targets are
    probability rows.
    """
    if logits.data.ndim != 2 or logits.shape[0] < 1:
        raise ShapeError(f"cross_entropy: logits must be (B>=1, K), got {logits.shape}")
    b, k = logits.shape
    target = np.asarray(target)
    if target.ndim == 1:
        if target.shape[0] != b:
            raise ShapeError(f"cross_entropy: {target.shape[0]} targets for batch of {b}")
        if not np.issubdtype(target.dtype, np.integer):
            raise ValueError("cross_entropy: hard targets must be integer class indices")
        if np.any((target < 0) | (target >= k)):
            bad = target[(target < 0) | (target >= k)][0]
            raise ValueError(f"cross_entropy: target class {int(bad)} out of range [0, {k})")
        onehot = np.zeros((b, k))
        onehot[np.arange(b), target] = 1.0
        dist = onehot
    else:
        dist = _check_distributions(target, k, "cross_entropy")
        if dist.shape[0] != b:
            raise ShapeError(f"cross_entropy: {dist.shape[0]} targets for batch of {b}")
    t = _soft_ce(logits, dist)
    return LossValue(t, {"cross_entropy": t.item()})


def kl_divergence(p_ref, logits_q: Tensor) -> LossValue:
    """Batch-mean KL(p_ref || softmax(logits_q)); ``p_ref`` is a constant."""
    if logits_q.data.ndim != 2:
        raise ShapeError(f"kl_divergence: logits must be (B, K), got {logits_q.shape}")
    b, k = logits_q.shape
    p = _check_distributions(p_ref, k, "kl_divergence")
    if p.shape[0] != b:
        raise ShapeError(f"kl_divergence: {p.shape[0]} reference rows for batch of {b}")
    logq = log_softmax_array(logits_q.data)
    pos = p > 0
    # zero-probability reference terms contribute nothing
    logp = np.log(np.where(pos, p, 1.0))
    value = np.where(pos, p * (logp - logq), 0.0).sum() / b

    def backward(g):
        q = np.exp(logq)
        return ((logits_q, g * (q * p.sum(axis=1, keepdims=True) - p) / b),)

    t = _make(np.asarray(value), (logits_q,), backward, "kl_divergence")
    return LossValue(t, {"kl_divergence": t.item()})


def softmax_probs(logits) -> np.ndarray:
    """Detached softmax rows of a tensor or array."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    return softmax_array(z)

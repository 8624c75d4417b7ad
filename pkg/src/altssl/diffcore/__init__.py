"""Minimal reverse-mode autodiff core, losses and optimizer."""

from .losses import LossValue, cross_entropy, kl_divergence, softmax_probs
from .optim import NesterovSGD, OptimizerState, nesterov_step, scaled_milestones, step_decay_lr
from .tensor import (
    OPS,
    ShapeError,
    Tensor,
    add,
    avg_pool2d,
    backward,
    conv2d,
    flatten,
    forward_op,
    linear,
    log_softmax,
    matmul,
    max_pool2d,
    mean_all,
    mul,
    relu,
    reshape,
    softmax,
    sum_all,
)

__all__ = [
    "OPS", "LossValue", "NesterovSGD", "OptimizerState", "ShapeError", "Tensor", "add",
    "avg_pool2d", "backward", "conv2d", "cross_entropy", "flatten", "forward_op",
    "kl_divergence", "linear", "log_softmax", "matmul", "max_pool2d", "mean_all", "mul",
    "nesterov_step", "relu", "reshape", "scaled_milestones", "softmax", "softmax_probs",
    "step_decay_lr", "sum_all",
]

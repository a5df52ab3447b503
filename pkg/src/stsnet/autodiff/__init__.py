"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .checkpoint import load_checkpoint, save_checkpoint
from .functional import (
    RunningStats,
    batchnorm,
    concat,
    conv2d,
    flatten,
    fully_connected,
    gated_linear_unit,
    leaky_relu,
    maxpool2d,
    one_hot,
    softmax,
    softmax_nll,
)
from .optim import Adam, AdamState, adam_step
from .tensor import ComputeGraph, Function, Tensor, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "ComputeGraph",
    "Function",
    "RunningStats",
    "Tensor",
    "adam_step",
    "batchnorm",
    "concat",
    "conv2d",
    "flatten",
    "fully_connected",
    "gated_linear_unit",
    "leaky_relu",
    "load_checkpoint",
    "maxpool2d",
    "no_grad",
    "one_hot",
    "save_checkpoint",
    "softmax",
    "softmax_nll",
]

"""Minimal reverse-mode differentiation engine for 1D convolutional networks."""

from .kernels import BACKEND
from .ops import (
    add,
    batchnorm1d,
    binary_to_two_class,
    concat_channels,
    conv1d,
    dense,
    global_avg_pool,
    maxpool1d,
    relu,
    sigmoid,
    softmax,
    weighted_cce,
)
from .tensor import Node, Tape, Tensor, grad_enabled, no_grad

__all__ = [
    "BACKEND",
    "Node",
    "Tape",
    "Tensor",
    "add",
    "batchnorm1d",
    "binary_to_two_class",
    "concat_channels",
    "conv1d",
    "dense",
    "global_avg_pool",
    "grad_enabled",
    "maxpool1d",
    "no_grad",
    "relu",
    "sigmoid",
    "softmax",
    "weighted_cce",
]

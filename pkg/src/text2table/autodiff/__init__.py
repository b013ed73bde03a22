"""Minimal dense-tensor reverse-mode autodiff over float64 numpy arrays."""

from .tensor import NumericError, Tape, Tensor, constant, current_tape, no_grad, parameter
from . import ops
from .layers import (
    AttentionParams,
    FeedForwardParams,
    LayerNormParams,
    LinearParams,
    multi_head_attention,
)
from .optim import Adam
from .checkpoint import load_params, save_params

__all__ = [
    "Adam",
    "AttentionParams",
    "FeedForwardParams",
    "LayerNormParams",
    "LinearParams",
    "NumericError",
    "Tape",
    "Tensor",
    "constant",
    "current_tape",
    "load_params",
    "multi_head_attention",
    "no_grad",
    "ops",
    "parameter",
    "save_params",
]

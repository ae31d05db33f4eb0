"""Minimal reverse-mode autodiff over numpy arrays."""

from . import ops, random
from .ops import (add, concat, exp, gelu, layer_norm, log, log_softmax, matmul, mean, mul,
                  reshape, scale, slice, softmax, sub, sum, swap_last, transpose)
from .tensor import Tape, Tensor, active_tape, as_tensor, backward, record

__all__ = [
    "Tape", "Tensor", "active_tape", "as_tensor", "backward", "record", "ops", "random",
    "add", "concat", "exp", "gelu", "layer_norm", "log", "log_softmax", "matmul", "mean",
    "mul", "reshape", "scale", "slice", "softmax", "sub", "sum", "swap_last", "transpose",
]

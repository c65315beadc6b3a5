"""Numerical substrate: tensors, reverse-mode autodiff, Adam."""
from .gradcheck import finite_diff_check
from .ops import (
    add,
    batch_norm,
    concat,
    conv2d,
    cross_entropy,
    div,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    softmax_rows,
    sub,
    transpose,
)
from .ops import sum as sum_  # noqa: F401
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, backward, current_tape

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "batch_norm",
    "concat",
    "conv2d",
    "cross_entropy",
    "current_tape",
    "div",
    "exp",
    "finite_diff_check",
    "getitem",
    "log",
    "matmul",
    "mean",
    "mul",
    "relu",
    "reshape",
    "softmax_rows",
    "sub",
    "sum_",
    "transpose",
]

"""Minimal array autodiff: NCHW layer ops, a tape, Adam and a gradient checker."""

from .gradcheck import GradCheckReport, finite_diff_check, relative_error
from .ops import (
    add,
    concat,
    conv2d,
    conv_transpose2d,
    cross_entropy,
    matmul,
    maxpool2d,
    mean,
    mse_loss,
    mul,
    relu,
    softmax,
    sum,
    tanh,
)
from .optim import AdamState, adam_step
from .tensor import DTYPE, Graph, Node, Tensor, backward, current_graph, no_grad, recording

__all__ = [
    "DTYPE", "AdamState", "GradCheckReport", "Graph", "Node", "Tensor",
    "adam_step", "add", "backward", "concat", "conv2d", "conv_transpose2d",
    "cross_entropy", "current_graph", "finite_diff_check", "matmul", "maxpool2d",
    "mean", "mse_loss", "mul", "no_grad", "recording", "relative_error", "relu",
    "softmax", "tanh",
]

"""Numeric core: tensors, reverse-mode autodiff, layers, optimizers."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_check, numeric_gradient
from .layers import (cross_entropy_index, dense, gru_cell, linear, lstm_cell,
                     mlp, soft_cross_entropy)
from .optim import Adam, SgdMomentum, clip_grad_inf, make_optimizer
from .params import ParamStore
from .tensor import (Tensor, add, add_const, add_rowvec, backward,
                     binary_cross_entropy_with_logits, concat, exp, log,
                     log_softmax, matmul, mean, mul, mul_const, neg, no_grad,
                     pick, relu, reshape, row, sigmoid, softmax, square,
                     stack_rows, sub, take, tanh, tsum)

__all__ = [
    "Adam", "ParamStore", "SgdMomentum", "Tensor",
    "add", "add_const", "add_rowvec", "backward",
    "binary_cross_entropy_with_logits", "clip_grad_inf", "concat",
    "cross_entropy_index", "dense", "exp", "finite_difference_check",
    "gru_cell", "linear", "load_checkpoint", "log", "log_softmax",
    "lstm_cell", "make_optimizer", "matmul", "mean", "mlp", "mul",
    "mul_const", "neg", "no_grad", "numeric_gradient", "pick", "relu",
    "reshape", "row", "save_checkpoint", "sigmoid", "soft_cross_entropy",
    "softmax", "square", "stack_rows", "sub", "take", "tanh", "tsum",
]

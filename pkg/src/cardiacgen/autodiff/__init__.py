"""Differentiable computation engine and network blocks."""
from .gradcheck import finite_diff_grad, rel_error
from .nn import (GRU, Conv1d, CriticNet, GeneratorNet, Linear, Module, critic_forward,
                 generator_forward, gru_cell, gru_scan, input_gradient)
from .optim import SGD, Adam
from .tensor import (Tensor, as_tensor, backward, concat, conv1d, default_dtype, enable_grad,
                     get_default_dtype, grad, no_grad, set_default_dtype, stack)

__all__ = [
    "Tensor", "as_tensor", "backward", "grad", "no_grad", "enable_grad", "concat", "stack",
    "conv1d", "default_dtype", "get_default_dtype", "set_default_dtype",
    "Module", "Linear", "Conv1d", "GRU", "GeneratorNet", "CriticNet",
    "generator_forward", "critic_forward", "gru_scan", "gru_cell", "input_gradient",
    "finite_diff_grad", "rel_error", "Adam", "SGD",
]

"""Numerical core: autodiff tape, NN kernels, parameters, Adam, oracles."""

from .tape import (
    Tensor,
    as_tensor,
    no_grad,
    grad_enabled,
    concat,
    matmul,
    exp,
    log,
    sqrt,
    tanh,
    erf,
    clip,
    permute_columns,
)
from .kernels import (
    conv2d,
    depthwise_conv2d,
    linear,
    layer_norm,
    gelu,
    softmax_rows,
    global_avg_pool,
)
from .params import ParameterStore
from .optim import Adam
from .oracle import numerical_jacobian, numerical_gradient, max_relative_error

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "grad_enabled",
    "concat",
    "matmul",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "erf",
    "clip",
    "permute_columns",
    "conv2d",
    "depthwise_conv2d",
    "linear",
    "layer_norm",
    "gelu",
    "softmax_rows",
    "global_avg_pool",
    "ParameterStore",
    "Adam",
    "numerical_jacobian",
    "numerical_gradient",
    "max_relative_error",
]

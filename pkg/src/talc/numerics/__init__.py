from .rng import Rng
from .tensor import (
    Tensor,
    add,
    add_bias,
    as_tensor,
    broadcast_to,
    grad_enabled,
    layer_norm,
    linear,
    matmul,
    mean_all,
    mse,
    mul,
    neg,
    no_grad,
    reshape,
    silu,
    softmax,
    stack,
    sum_all,
    take,
    transpose,
)
from .kernels import backend

__all__ = [
    "Rng", "Tensor", "add", "add_bias", "as_tensor", "backend", "broadcast_to",
    "grad_enabled", "layer_norm", "linear", "matmul", "mean_all", "mse", "mul",
    "neg", "no_grad", "reshape", "silu", "softmax", "stack", "sum_all", "take",
    "transpose",
]

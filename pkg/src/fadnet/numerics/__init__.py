"""Minimal differentiable array core: tensors, layers and gradient checks."""
from . import kernels
from .gradcheck import grad_check
from .module import Module, he_normal
from .ops import (
    concat,
    conv1d,
    conv2d,
    downsample1d,
    exp,
    group_norm,
    linear,
    mse,
    relu,
    sigmoid,
    silu,
    softmax,
    upsample_nearest1d,
)
from .tensor import Parameter, Tensor, add, as_tensor, matmul, mul, no_grad

__all__ = [
    "Module", "Parameter", "Tensor", "add", "as_tensor", "concat", "conv1d", "conv2d",
    "downsample1d", "exp", "grad_check", "group_norm", "he_normal", "kernels", "linear",
    "matmul", "mse", "mul", "no_grad", "relu", "sigmoid", "silu", "softmax",
    "upsample_nearest1d",
]

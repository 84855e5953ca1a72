"""Minimal dense-tensor engine with reverse-mode differentiation."""

from tcinn.autodiff.ops import (
    add,
    atan,
    channel_affine,
    channel_affine_inverse,
    channel_concat,
    channel_mean,
    channel_mix,
    channel_repeat,
    channel_split,
    conv2d,
    exp_elementwise,
    hadamard,
    leaky_relu,
    matrix_inverse,
    pointwise,
    reduce_mse,
    scale,
    sub,
)
from tcinn.autodiff.tape import Function, GradientMap, Tape, active_tape, backward
from tcinn.autodiff.tensor import (
    Parameter,
    Tensor,
    get_dtype,
    get_precision,
    precision,
    set_precision,
)

__all__ = [
    "Function",
    "GradientMap",
    "Parameter",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "atan",
    "backward",
    "channel_affine",
    "channel_affine_inverse",
    "channel_concat",
    "channel_mean",
    "channel_mix",
    "channel_repeat",
    "channel_split",
    "conv2d",
    "exp_elementwise",
    "get_dtype",
    "get_precision",
    "hadamard",
    "leaky_relu",
    "matrix_inverse",
    "pointwise",
    "precision",
    "reduce_mse",
    "scale",
    "set_precision",
    "sub",
]

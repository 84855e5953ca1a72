"""Differentiable operations on N×C×H×W tensors.

Shapes must agree exactly; the only broadcast is a per-channel bias, scale or
shift over the channel axis.
"""

from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import lu_factor, lu_solve

from tcinn.autodiff.tape import Function
from tcinn.autodiff.tensor import Tensor
from tcinn.errors import ShapeError, ValidationError


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _require_image(op: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected an N×C×H×W tensor, got shape {x.shape}")


class Add(Function):
    name = "add"

    def forward(self, x, y):
        return x + y

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    name = "sub"

    def forward(self, x, y):
        return x - y

    def backward(self, grad):
        return grad, -grad


class Hadamard(Function):
    name = "hadamard"

    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return grad * self.y, grad * self.x


class Exp(Function):
    name = "exp"

    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Atan(Function):
    name = "atan"

    def forward(self, x):
        self.x = x
        return np.arctan(x)

    def backward(self, grad):
        return (grad / (1.0 + self.x * self.x),)


class Scale(Function):
    name = "scale"
    factor = 1.0

    def forward(self, x):
        return x * x.dtype.type(self.factor)

    def backward(self, grad):
        return (grad * grad.dtype.type(self.factor),)


class LeakyReLU(Function):
    name = "leaky_relu"
    slope = 0.2

    def forward(self, x):
        self.positive = x > 0
        return np.where(self.positive, x, x * x.dtype.type(self.slope))

    def backward(self, grad):
        return (np.where(self.positive, grad, grad * grad.dtype.type(self.slope)),)


class Conv2d(Function):
    """Cross-correlation (no kernel flip) with zero padding."""

    name = "conv2d"
    stride = 1
    padding = 0

    def forward(self, x, kernel, bias):
        p, s = self.padding, self.stride
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        kh, kw = kernel.shape[2:]
        windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
        out = np.tensordot(windows, kernel, axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
        self.windows = windows
        self.kernel = kernel
        self.padded_shape = padded.shape
        self.input_hw = x.shape[2:]
        return np.ascontiguousarray(out)

    def backward(self, grad):
        p, s = self.padding, self.stride
        kernel = self.kernel
        kh, kw = kernel.shape[2:]
        ho, wo = grad.shape[2:]

        grad_kernel = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_bias = grad.sum(axis=(0, 2, 3))

        grad_padded = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(grad, kernel[:, :, i, j], axes=([1], [0]))
                grad_padded[:, :, i : i + s * ho : s, j : j + s * wo : s] += contrib.transpose(0, 3, 1, 2)
        h, w = self.input_hw
        grad_input = grad_padded[:, :, p : p + h, p : p + w]
        return np.ascontiguousarray(grad_input), grad_kernel, grad_bias


class ChannelSlice(Function):
    name = "channel_slice"
    start = 0
    stop = 0

    def forward(self, x):
        self.input_shape = x.shape
        return np.ascontiguousarray(x[:, self.start : self.stop])

    def backward(self, grad):
        full = np.zeros(self.input_shape, dtype=grad.dtype)
        full[:, self.start : self.stop] = grad
        return (full,)


class ChannelConcat(Function):
    name = "channel_concat"

    def forward(self, *parts):
        self.bounds = np.cumsum([0] + [part.shape[1] for part in parts])
        return np.concatenate(parts, axis=1)

    def backward(self, grad):
        return tuple(
            np.ascontiguousarray(grad[:, lo:hi]) for lo, hi in zip(self.bounds[:-1], self.bounds[1:])
        )


class ChannelMix(Function):
    """Per-pixel matrix product across channels: y[:, i] = Σ_j M[i, j] x[:, j]."""

    name = "channel_mix"

    def forward(self, x, matrix):
        self.x, self.matrix = x, matrix
        return np.ascontiguousarray(np.tensordot(matrix, x, axes=([1], [1])).transpose(1, 0, 2, 3))

    def backward(self, grad):
        grad_x = np.tensordot(self.matrix, grad, axes=([0], [1])).transpose(1, 0, 2, 3)
        grad_matrix = np.tensordot(grad, self.x, axes=([0, 2, 3], [0, 2, 3]))
        return np.ascontiguousarray(grad_x), grad_matrix


class MatrixInverse(Function):
    name = "matrix_inverse"
    factorization = None

    def forward(self, matrix):
        factorization = self.factorization if self.factorization is not None else lu_factor(matrix)
        identity = np.eye(matrix.shape[0], dtype=matrix.dtype)
        self.inverse = lu_solve(factorization, identity).astype(matrix.dtype)
        return self.inverse

    def backward(self, grad):
        inv_t = self.inverse.T
        return (-(inv_t @ grad @ inv_t),)


class ChannelAffine(Function):
    name = "channel_affine"

    def forward(self, x, scale, shift):
        self.x, self.scale = x, scale
        return x * scale[None, :, None, None] + shift[None, :, None, None]

    def backward(self, grad):
        grad_x = grad * self.scale[None, :, None, None]
        grad_scale = (grad * self.x).sum(axis=(0, 2, 3))
        grad_shift = grad.sum(axis=(0, 2, 3))
        return grad_x, grad_scale, grad_shift


class ChannelAffineInverse(Function):
    name = "channel_affine_inverse"

    def forward(self, y, scale, shift):
        self.scale = scale
        self.x = (y - shift[None, :, None, None]) / scale[None, :, None, None]
        return self.x

    def backward(self, grad):
        grad_y = grad / self.scale[None, :, None, None]
        grad_scale = -(grad_y * self.x).sum(axis=(0, 2, 3))
        grad_shift = -grad_y.sum(axis=(0, 2, 3))
        return grad_y, grad_scale, grad_shift


class ChannelRepeat(Function):
    name = "channel_repeat"
    copies = 1

    def forward(self, x):
        return np.repeat(x, self.copies, axis=1)

    def backward(self, grad):
        return (grad.sum(axis=1, keepdims=True),)


class ChannelMean(Function):
    name = "channel_mean"

    def forward(self, x):
        self.channels = x.shape[1]
        return x.mean(axis=1, keepdims=True)

    def backward(self, grad):
        shape = list(grad.shape)
        shape[1] = self.channels
        return (np.broadcast_to(grad / grad.dtype.type(self.channels), shape).copy(),)


class ReduceMSE(Function):
    name = "reduce_mse"

    def forward(self, a, b):
        self.diff = a - b
        return np.asarray(np.mean(self.diff * self.diff), dtype=a.dtype)

    def backward(self, grad):
        g = grad * self.diff * self.diff.dtype.type(2.0 / self.diff.size)
        return g, -g


def add(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("add", x, y)
    return Add.apply(x, y)


def sub(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("sub", x, y)
    return Sub.apply(x, y)


def hadamard(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("hadamard", x, y)
    return Hadamard.apply(x, y)


_POINTWISE = {"add": add, "sub": sub, "hadamard": hadamard}


def pointwise(x: Tensor, y: Tensor, kind: str) -> Tensor:
    try:
        op = _POINTWISE[kind]
    except KeyError:
        raise ValidationError(f"Unknown pointwise kind {kind!r}; expected one of {sorted(_POINTWISE)}")
    return op(x, y)


def exp_elementwise(x: Tensor) -> Tensor:
    return Exp.apply(x)


def atan(x: Tensor) -> Tensor:
    return Atan.apply(x)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValidationError(f"leaky_relu slope must lie in [0, 1), got {slope}")
    return LeakyReLU.apply(x, slope=float(slope))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    _require_image("conv2d", x)
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be Cout×Cin×kh×kw, got {kernel.shape}")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but kernel expects {kcin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError(f"conv2d: kernel extents must be odd, got {kh}×{kw}")
    if stride < 1 or padding < 0:
        raise ValidationError(f"conv2d: invalid stride {stride} / padding {padding}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d: {kh}×{kw} kernel does not fit a padded {h}×{w} input")
    return Conv2d.apply(x, kernel, bias, stride=stride, padding=padding)


def channel_split(x: Tensor, d: int) -> Tuple[Tensor, Tensor]:
    _require_image("channel_split", x)
    channels = x.shape[1]
    if not 1 <= d < channels:
        raise ValidationError(f"channel_split: split index {d} outside [1, {channels})")
    return (
        ChannelSlice.apply(x, start=0, stop=d),
        ChannelSlice.apply(x, start=d, stop=channels),
    )


def channel_concat(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValidationError("channel_concat needs at least one tensor")
    for part in parts:
        _require_image("channel_concat", part)
    ref = parts[0].shape
    for part in parts[1:]:
        if part.shape[0] != ref[0] or part.shape[2:] != ref[2:]:
            raise ShapeError(f"channel_concat: shape mismatch {ref} vs {part.shape}")
    return ChannelConcat.apply(*parts)


def channel_mix(x: Tensor, matrix: Tensor) -> Tensor:
    _require_image("channel_mix", x)
    channels = x.shape[1]
    if matrix.shape != (channels, channels):
        raise ShapeError(f"channel_mix: matrix {matrix.shape} does not match {channels} channels")
    return ChannelMix.apply(x, matrix)


def matrix_inverse(matrix: Tensor, factorization: Optional[tuple] = None) -> Tensor:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ShapeError(f"matrix_inverse: expected a square matrix, got {matrix.shape}")
    return MatrixInverse.apply(matrix, factorization=factorization)


def _check_channel_vectors(op: str, x: Tensor, *vectors: Tensor) -> None:
    _require_image(op, x)
    for vector in vectors:
        if vector.shape != (x.shape[1],):
            raise ShapeError(f"{op}: per-channel vector {vector.shape} does not match {x.shape[1]} channels")


def channel_affine(x: Tensor, scale_: Tensor, shift: Tensor) -> Tensor:
    _check_channel_vectors("channel_affine", x, scale_, shift)
    return ChannelAffine.apply(x, scale_, shift)


def channel_affine_inverse(y: Tensor, scale_: Tensor, shift: Tensor) -> Tensor:
    _check_channel_vectors("channel_affine_inverse", y, scale_, shift)
    return ChannelAffineInverse.apply(y, scale_, shift)


def channel_repeat(x: Tensor, copies: int) -> Tensor:
    _require_image("channel_repeat", x)
    if x.shape[1] != 1:
        raise ShapeError(f"channel_repeat: expected a single-channel tensor, got {x.shape[1]} channels")
    return ChannelRepeat.apply(x, copies=int(copies))


def channel_mean(x: Tensor) -> Tensor:
    _require_image("channel_mean", x)
    return ChannelMean.apply(x)


def reduce_mse(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("reduce_mse", a, b)
    if a.size == 0:
        raise ValidationError("reduce_mse: tensors are empty")
    return ReduceMSE.apply(a, b)

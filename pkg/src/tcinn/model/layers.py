"""Invertible layers: dense sub-networks, enhanced affine coupling, 1×1 convolution, actnorm."""

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import lu_factor

from tcinn.autodiff import ops
from tcinn.autodiff.tensor import Parameter, Tensor
from tcinn.errors import NumericalError, ShapeError, SingularMatrixError, ValidationError

logger = logging.getLogger("TCINN.Model")

LEAKY_SLOPE = 0.2
DEFAULT_CLAMP = 2.0
MIN_ABS_DET = 1e-8
MAX_CONDITION = 1e8
ACTNORM_EPS = 1e-6


@dataclass
class DenseBlockParams:
    """Kernels and biases of a densely connected stack of 3×3 convolutions.

    Layer ``l`` (0-based) consumes ``in_channels + l * growth`` channels; the last
    layer emits ``out_channels``.
    """

    weights: List[Parameter]
    biases: List[Parameter]
    in_channels: int
    out_channels: int
    growth: int

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("A dense block needs one bias per kernel and at least one layer")
        for index, weight in enumerate(self.weights):
            expected_in = self.in_channels + index * self.growth
            expected_out = self.out_channels if index == len(self.weights) - 1 else self.growth
            if weight.shape[:2] != (expected_out, expected_in):
                raise ShapeError(
                    f"{weight.name}: expected {expected_out}×{expected_in} kernel, got {weight.shape}"
                )

    @property
    def depth(self) -> int:
        return len(self.weights)

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for weight, bias in zip(self.weights, self.biases):
            params.extend((weight, bias))
        return params


def dense_block_apply(x: Tensor, p: DenseBlockParams) -> Tensor:
    if x.ndim != 4 or x.shape[1] != p.in_channels:
        raise ShapeError(
            f"dense block expects {p.in_channels} input channels, got shape {x.shape}"
        )
    features = x
    last = p.depth - 1
    out = x
    for index, (weight, bias) in enumerate(zip(p.weights, p.biases)):
        out = ops.conv2d(features, weight.tensor(), bias.tensor(), stride=1, padding=1)
        if index < last:
            out = ops.leaky_relu(out, LEAKY_SLOPE)
            features = ops.channel_concat([features, out])
    return out


def soft_clamp(s_raw: Tensor, alpha: float) -> Tensor:
    """α·(2/π)·atan(s/α): a smooth, odd, strictly monotone squash into (−α, α)."""
    if alpha <= 0:
        raise ValidationError(f"soft_clamp bound must be positive, got {alpha}")
    return ops.scale(ops.atan(ops.scale(s_raw, 1.0 / alpha)), 2.0 * alpha / math.pi)


@dataclass
class CouplingParams:
    s: DenseBlockParams
    t: DenseBlockParams
    r: DenseBlockParams
    alpha: float = DEFAULT_CLAMP

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValidationError(f"clamp bound must be positive, got {self.alpha}")
        first, second = self.r.out_channels, self.r.in_channels
        for role, block in (("s", self.s), ("t", self.t)):
            if (block.in_channels, block.out_channels) != (first, second):
                raise ShapeError(
                    f"{role} must map {first} to {second} channels, "
                    f"maps {block.in_channels} to {block.out_channels}"
                )

    @property
    def split(self) -> int:
        return self.r.out_channels

    @property
    def channels(self) -> int:
        return self.r.out_channels + self.r.in_channels

    def parameters(self) -> List[Parameter]:
        return self.s.parameters() + self.t.parameters() + self.r.parameters()


def _check_coupling_input(m: Tensor, p: CouplingParams, d: int) -> None:
    if m.ndim != 4 or m.shape[1] != p.channels:
        raise ShapeError(f"coupling expects {p.channels} channels, got shape {m.shape}")
    if d != p.split:
        raise ShapeError(f"coupling built for split {p.split}, called with {d}")


def _ensure_finite(x: Tensor, where: str, alpha: float) -> Tensor:
    if not x.is_finite():
        raise NumericalError(
            f"{where} produced non-finite values; check the clamp bound (alpha={alpha}) and input range"
        )
    return x


def coupling_forward(m: Tensor, p: CouplingParams, d: int) -> Tensor:
    # n1 is computed first so that s and t condition on n1, which is what the
    # inverse can see.
    _check_coupling_input(m, p, d)
    m1, m2 = ops.channel_split(m, d)
    n1 = ops.add(m1, dense_block_apply(m2, p.r))
    log_scale = soft_clamp(dense_block_apply(n1, p.s), p.alpha)
    n2 = ops.add(ops.hadamard(m2, ops.exp_elementwise(log_scale)), dense_block_apply(n1, p.t))
    return _ensure_finite(ops.channel_concat([n1, n2]), "coupling forward", p.alpha)


def coupling_inverse(n: Tensor, p: CouplingParams, d: int) -> Tensor:
    _check_coupling_input(n, p, d)
    n1, n2 = ops.channel_split(n, d)
    log_scale = soft_clamp(dense_block_apply(n1, p.s), p.alpha)
    m2 = ops.hadamard(
        ops.sub(n2, dense_block_apply(n1, p.t)),
        ops.exp_elementwise(ops.scale(log_scale, -1.0)),
    )
    m1 = ops.sub(n1, dense_block_apply(m2, p.r))
    return _ensure_finite(ops.channel_concat([m1, m2]), "coupling inverse", p.alpha)


class Inv1x1Params:
    """Learnable C×C channel-mixing matrix with a cached LU factorization.

    The factorization is keyed on the weight's version, so an optimizer
    ``assign`` invalidates it with the same update.
    """

    def __init__(self, weight: Parameter):
        if len(weight.shape) != 2 or weight.shape[0] != weight.shape[1]:
            raise ShapeError(f"{weight.name}: 1×1 convolution weight must be square, got {weight.shape}")
        self.weight = weight
        self._lock = threading.Lock()
        self._cache: Optional[Tuple[int, tuple]] = None
        self.factorization()

    @property
    def channels(self) -> int:
        return self.weight.shape[0]

    def factorization(self) -> tuple:
        value, version = self.weight.snapshot()
        with self._lock:
            if self._cache is not None and self._cache[0] == version:
                return self._cache[1]
            lu, piv = lu_factor(np.asarray(value, dtype=np.float64), check_finite=False)
            det = float(np.prod(np.diag(lu)))
            if not np.isfinite(det) or abs(det) <= MIN_ABS_DET:
                raise SingularMatrixError(f"{self.weight.name}: |det W| = {abs(det):.3g} is too small")
            condition = np.linalg.cond(value.astype(np.float64))
            if not np.isfinite(condition) or condition > MAX_CONDITION:
                raise SingularMatrixError(f"{self.weight.name}: condition number {condition:.3g} exceeds {MAX_CONDITION:g}")
            dtype = value.dtype
            factor = (lu.astype(dtype), piv)
            self._cache = (version, factor)
            return factor

    def parameters(self) -> List[Parameter]:
        return [self.weight]


def inv1x1_forward(x: Tensor, p: Inv1x1Params) -> Tensor:
    p.factorization()
    return ops.channel_mix(x, p.weight.tensor())


def inv1x1_inverse(y: Tensor, p: Inv1x1Params) -> Tensor:
    inverse = ops.matrix_inverse(p.weight.tensor(), factorization=p.factorization())
    return ops.channel_mix(y, inverse)


@dataclass
class ActnormParams:
    scale: Parameter
    shift: Parameter
    initialized: bool = field(default=False)

    def __post_init__(self):
        if self.scale.shape != self.shift.shape or len(self.scale.shape) != 1:
            raise ShapeError("actnorm scale and shift must be matching per-channel vectors")
        self.check()

    def check(self) -> None:
        if np.any(self.scale.value == 0):
            raise ValidationError(f"{self.scale.name}: actnorm scales must be nonzero")

    def parameters(self) -> List[Parameter]:
        return [self.scale, self.shift]


def actnorm_forward(x: Tensor, p: ActnormParams) -> Tensor:
    return ops.channel_affine(x, p.scale.tensor(), p.shift.tensor())


def actnorm_inverse(y: Tensor, p: ActnormParams) -> Tensor:
    return ops.channel_affine_inverse(y, p.scale.tensor(), p.shift.tensor())


def actnorm_initialize(p: ActnormParams, x: Tensor) -> None:
    """Set scale = 1/std and shift = −mean/std per channel over the batch ``x``."""
    data = x.data.astype(np.float64)
    mean = data.mean(axis=(0, 2, 3))
    std = data.std(axis=(0, 2, 3))
    scale = 1.0 / (std + ACTNORM_EPS)
    p.scale.assign(scale)
    p.shift.assign(-mean * scale)
    p.initialized = True
    logger.debug("Initialized %s from a batch of shape %s", p.scale.name, x.shape)

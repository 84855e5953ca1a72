"""The bijection stack: blocks of [actnorm →] 1×1 convolution → enhanced coupling."""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from tcinn.autodiff import ops
from tcinn.autodiff.tensor import Parameter, Tensor, get_dtype
from tcinn.errors import ShapeError, ValidationError
from tcinn.model.layers import (
    DEFAULT_CLAMP,
    ActnormParams,
    CouplingParams,
    DenseBlockParams,
    Inv1x1Params,
    actnorm_forward,
    actnorm_initialize,
    actnorm_inverse,
    coupling_forward,
    coupling_inverse,
    inv1x1_forward,
    inv1x1_inverse,
)

logger = logging.getLogger("TCINN.Model")


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 3
    blocks: int = 4
    depth: int = 8
    growth: int = 16
    clamp: float = DEFAULT_CLAMP
    actnorm: bool = False
    split: Optional[int] = None

    def __post_init__(self):
        if self.channels < 2:
            raise ValidationError(f"channels must be at least 2 for a coupling split, got {self.channels}")
        if self.blocks < 0:
            raise ValidationError(f"blocks must be non-negative, got {self.blocks}")
        if self.depth < 1 or self.growth < 1:
            raise ValidationError(f"dense blocks need depth >= 1 and growth >= 1, got {self.depth}/{self.growth}")
        if self.clamp <= 0:
            raise ValidationError(f"clamp must be positive, got {self.clamp}")
        if self.split is not None and not 1 <= self.split < self.channels:
            raise ValidationError(f"split {self.split} outside [1, {self.channels})")

    @property
    def split_index(self) -> int:
        return self.split if self.split is not None else self.channels // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class InvertibleBlock:
    conv: Inv1x1Params
    coupling: CouplingParams
    actnorm: Optional[ActnormParams] = None

    def parameters(self) -> List[Parameter]:
        params = self.actnorm.parameters() if self.actnorm is not None else []
        return params + self.conv.parameters() + self.coupling.parameters()


@dataclass
class TCINNModel:
    config: ModelConfig
    blocks: List[InvertibleBlock]

    def __post_init__(self):
        c, d = self.config.channels, self.config.split_index
        for index, block in enumerate(self.blocks):
            if block.conv.channels != c or block.coupling.channels != c or block.coupling.split != d:
                raise ShapeError(f"block {index} is inconsistent with channels={c}, split={d}")

    @property
    def channels(self) -> int:
        return self.config.channels

    @property
    def split(self) -> int:
        return self.config.split_index


def _check_channels(x: Tensor, model: TCINNModel) -> None:
    if x.ndim != 4 or x.shape[1] != model.channels:
        raise ShapeError(f"model expects N×{model.channels}×H×W input, got shape {x.shape}")


def model_forward(x: Tensor, model: TCINNModel) -> Tensor:
    _check_channels(x, model)
    for block in model.blocks:
        if block.actnorm is not None:
            x = actnorm_forward(x, block.actnorm)
        x = inv1x1_forward(x, block.conv)
        x = coupling_forward(x, block.coupling, model.split)
    return x


def model_inverse(y: Tensor, model: TCINNModel) -> Tensor:
    _check_channels(y, model)
    for block in reversed(model.blocks):
        y = coupling_inverse(y, block.coupling, model.split)
        y = inv1x1_inverse(y, block.conv)
        if block.actnorm is not None:
            y = actnorm_inverse(y, block.actnorm)
    return y


def augment_channels(img: Tensor, channels: int) -> Tensor:
    """Replicate a single-channel N×1×H×W image into ``channels`` identical copies."""
    if channels < 2:
        raise ValidationError(f"channel augmentation needs at least 2 channels, got {channels}")
    return ops.channel_repeat(img, channels)


def collapse_channels(x: Tensor) -> Tensor:
    return ops.channel_mean(x)


def model_parameters(model: TCINNModel) -> Dict[str, Parameter]:
    params: Dict[str, Parameter] = {}
    for block in model.blocks:
        for param in block.parameters():
            params[param.name] = param
    return params


def check_invertible(model: TCINNModel) -> None:
    """Re-validate every 1×1 matrix and actnorm scale after a parameter update."""
    for block in model.blocks:
        block.conv.factorization()
        if block.actnorm is not None:
            block.actnorm.check()


def initialize_actnorm(model: TCINNModel, x: Tensor) -> None:
    """Data-dependent actnorm init, block by block, on one batch."""
    _check_channels(x, model)
    for block in model.blocks:
        if block.actnorm is not None and not block.actnorm.initialized:
            actnorm_initialize(block.actnorm, x)
        if block.actnorm is not None:
            x = actnorm_forward(x, block.actnorm)
        x = inv1x1_forward(x, block.conv)
        x = coupling_forward(x, block.coupling, model.split)


def _dense_block(
    rng: np.random.Generator, prefix: str, in_channels: int, out_channels: int, config: ModelConfig
) -> DenseBlockParams:
    weights, biases = [], []
    for layer in range(config.depth):
        cin = in_channels + layer * config.growth
        last = layer == config.depth - 1
        cout = out_channels if last else config.growth
        if last:
            kernel = np.zeros((cout, cin, 3, 3))
        else:
            kernel = rng.standard_normal((cout, cin, 3, 3)) * np.sqrt(2.0 / (cin * 9))
        weights.append(Parameter(f"{prefix}.conv{layer}.weight", kernel))
        biases.append(Parameter(f"{prefix}.conv{layer}.bias", np.zeros(cout)))
    return DenseBlockParams(weights, biases, in_channels, out_channels, config.growth)


def _random_orthogonal(rng: np.random.Generator, size: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def init_model(seed: int, config: ModelConfig) -> TCINNModel:
    """Seeded model that starts as the identity map.

    Every s, t, r block ends in an all-zero layer, so each coupling starts as
    the identity. The 1×1 matrices are random orthogonal except the last one,
    which is the transpose of the product of the others, so the whole stack
    composes to the identity.
    """
    rng = np.random.default_rng(seed)
    c, d = config.channels, config.split_index
    product = np.eye(c)
    blocks = []
    for index in range(config.blocks):
        prefix = f"block{index}"
        if index == config.blocks - 1:
            matrix = product.T
        else:
            matrix = _random_orthogonal(rng, c)
            product = matrix @ product
        conv = Inv1x1Params(Parameter(f"{prefix}.inv1x1.weight", matrix))
        coupling = CouplingParams(
            s=_dense_block(rng, f"{prefix}.coupling.s", d, c - d, config),
            t=_dense_block(rng, f"{prefix}.coupling.t", d, c - d, config),
            r=_dense_block(rng, f"{prefix}.coupling.r", c - d, d, config),
            alpha=config.clamp,
        )
        actnorm = None
        if config.actnorm:
            actnorm = ActnormParams(
                Parameter(f"{prefix}.actnorm.scale", np.ones(c)),
                Parameter(f"{prefix}.actnorm.shift", np.zeros(c)),
            )
        blocks.append(InvertibleBlock(conv=conv, coupling=coupling, actnorm=actnorm))
    logger.debug(
        "Initialized %d-block model (C=%d, d=%d, dtype=%s) from seed %d",
        config.blocks, c, d, np.dtype(get_dtype()).name, seed,
    )
    return TCINNModel(config=config, blocks=blocks)

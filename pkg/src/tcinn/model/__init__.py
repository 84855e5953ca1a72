"""Invertible tracer-conversion network."""

from tcinn.model.layers import (
    ActnormParams,
    CouplingParams,
    DenseBlockParams,
    Inv1x1Params,
    actnorm_forward,
    actnorm_initialize,
    actnorm_inverse,
    coupling_forward,
    coupling_inverse,
    dense_block_apply,
    inv1x1_forward,
    inv1x1_inverse,
    soft_clamp,
)
from tcinn.model.network import (
    InvertibleBlock,
    ModelConfig,
    TCINNModel,
    augment_channels,
    check_invertible,
    collapse_channels,
    init_model,
    initialize_actnorm,
    model_forward,
    model_inverse,
    model_parameters,
)

__all__ = [
    "ActnormParams",
    "CouplingParams",
    "DenseBlockParams",
    "Inv1x1Params",
    "InvertibleBlock",
    "ModelConfig",
    "TCINNModel",
    "actnorm_forward",
    "actnorm_initialize",
    "actnorm_inverse",
    "augment_channels",
    "check_invertible",
    "collapse_channels",
    "coupling_forward",
    "coupling_inverse",
    "dense_block_apply",
    "init_model",
    "initialize_actnorm",
    "inv1x1_forward",
    "inv1x1_inverse",
    "model_forward",
    "model_inverse",
    "model_parameters",
    "soft_clamp",
]

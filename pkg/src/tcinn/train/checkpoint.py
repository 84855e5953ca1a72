"""Checkpoints stored as TCIT bundles (record kind 1)."""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, TypedDict, Union

import numpy as np

from tcinn.autodiff.tensor import get_precision
from tcinn.data.tensor_file import decode_bundle, encode_bundle
from tcinn.errors import CheckpointError, ConfigMismatchError
from tcinn.model.network import ModelConfig, TCINNModel, check_invertible, init_model, model_parameters
from tcinn.train.optim import AdamState

logger = logging.getLogger("TCINN.Trainer")

FORMAT_VERSION = 1
RECORD_KIND = "CKPT"

_PARAM = "param/"
_FIRST = "adam_m/"
_SECOND = "adam_v/"


class CheckpointMeta(TypedDict):
    kind: str
    format_version: int
    model_config: Dict[str, Any]
    epoch: int
    adam_step: int
    rng_state: Dict[str, Any]
    precision: str
    actnorm_initialized: bool


@dataclass
class Checkpoint:
    model_config: ModelConfig
    parameters: Dict[str, np.ndarray]
    optimizer: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    rng_state: Dict[str, Any] = field(default_factory=dict)
    precision: str = field(default_factory=get_precision)
    actnorm_initialized: bool = False
    format_version: int = FORMAT_VERSION


def checkpoint_from_model(
    model: TCINNModel,
    optimizer: Optional[AdamState] = None,
    epoch: int = 0,
    rng_state: Optional[Dict[str, Any]] = None,
) -> Checkpoint:
    actnorm_initialized = any(
        block.actnorm is not None and block.actnorm.initialized for block in model.blocks
    )
    return Checkpoint(
        model_config=model.config,
        parameters={name: np.array(p.value) for name, p in model_parameters(model).items()},
        optimizer=optimizer if optimizer is not None else AdamState(),
        epoch=epoch,
        rng_state=dict(rng_state or {}),
        actnorm_initialized=actnorm_initialized,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> TCINNModel:
    model = init_model(0, ckpt.model_config)
    params = model_parameters(model)
    missing = sorted(set(params) - set(ckpt.parameters))
    extra = sorted(set(ckpt.parameters) - set(params))
    if missing or extra:
        raise CheckpointError(f"checkpoint parameters do not match the model: missing={missing[:3]} extra={extra[:3]}")
    for name, param in params.items():
        param.assign(ckpt.parameters[name])
    for block in model.blocks:
        if block.actnorm is not None:
            block.actnorm.initialized = ckpt.actnorm_initialized
    check_invertible(model)
    return model


def save_checkpoint(ckpt: Checkpoint, path: Union[str, os.PathLike]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta: CheckpointMeta = {
        "kind": RECORD_KIND,
        "format_version": ckpt.format_version,
        "model_config": ckpt.model_config.to_dict(),
        "epoch": ckpt.epoch,
        "adam_step": ckpt.optimizer.step,
        "rng_state": ckpt.rng_state,
        "precision": ckpt.precision,
        "actnorm_initialized": ckpt.actnorm_initialized,
    }
    records: Dict[str, np.ndarray] = {}
    for name in sorted(ckpt.parameters):
        records[_PARAM + name] = ckpt.parameters[name]
    for name in sorted(ckpt.optimizer.first_moment):
        records[_FIRST + name] = ckpt.optimizer.first_moment[name]
        records[_SECOND + name] = ckpt.optimizer.second_moment[name]
    path.write_bytes(encode_bundle(meta, records))
    logger.info("Saved checkpoint (epoch %d, %d parameters) to %s", ckpt.epoch, len(ckpt.parameters), path)
    return path


def load_checkpoint(path: Union[str, os.PathLike], expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    path = Path(path)
    meta, records = decode_bundle(path.read_bytes(), str(path))
    if meta.get("kind") != RECORD_KIND:
        raise CheckpointError(f"{path}: bundle kind {meta.get('kind')!r} is not a checkpoint")
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {meta.get('format_version')}, expected {FORMAT_VERSION}"
        )
    try:
        config = ModelConfig.from_dict(meta["model_config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable model config ({exc})") from exc
    if expected_config is not None and config != expected_config:
        raise ConfigMismatchError(
            f"{path}: checkpoint was trained with {config}, requested {expected_config}"
        )

    parameters = {name[len(_PARAM):]: value for name, value in records.items() if name.startswith(_PARAM)}
    first = {name[len(_FIRST):]: value for name, value in records.items() if name.startswith(_FIRST)}
    second = {name[len(_SECOND):]: value for name, value in records.items() if name.startswith(_SECOND)}
    if set(first) != set(second):
        raise CheckpointError(f"{path}: optimizer moments are incomplete")
    return Checkpoint(
        model_config=config,
        parameters=parameters,
        optimizer=AdamState(step=int(meta.get("adam_step", 0)), first_moment=first, second_moment=second),
        epoch=int(meta.get("epoch", 0)),
        rng_state=meta.get("rng_state", {}),
        precision=meta.get("precision", get_precision()),
        actnorm_initialized=bool(meta.get("actnorm_initialized", False)),
        format_version=FORMAT_VERSION,
    )

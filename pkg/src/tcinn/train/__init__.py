"""Optimizer, checkpoints and the bidirectional training loop."""

from tcinn.train.checkpoint import (
    Checkpoint,
    checkpoint_from_model,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from tcinn.train.loop import (
    BatchPrefetcher,
    LossComponents,
    LossCurve,
    LossRecord,
    TrainConfig,
    load_dataset,
    loss_hold,
    read_loss_curve,
    roundtrip_error,
    train,
    write_loss_curve,
)
from tcinn.train.optim import AdamState, adam_step, clip_grad_norm, lr_at_epoch

__all__ = [
    "AdamState",
    "BatchPrefetcher",
    "Checkpoint",
    "LossComponents",
    "LossCurve",
    "LossRecord",
    "TrainConfig",
    "adam_step",
    "checkpoint_from_model",
    "clip_grad_norm",
    "load_dataset",
    "load_checkpoint",
    "loss_hold",
    "lr_at_epoch",
    "model_from_checkpoint",
    "read_loss_curve",
    "roundtrip_error",
    "save_checkpoint",
    "train",
    "write_loss_curve",
]

"""Bidirectional loss and the training loop."""

import csv
import logging
import math
import os
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from tcinn.autodiff import ops
from tcinn.autodiff.tape import Tape, backward
from tcinn.autodiff.tensor import Tensor, get_dtype
from tcinn.data.manifest import DatasetManifest, load_image, validate_manifest
from tcinn.data.preprocess import format_decimal
from tcinn.errors import ConfigMismatchError, NumericalError, ShapeError, ValidationError
from tcinn.model.network import (
    ModelConfig,
    TCINNModel,
    augment_channels,
    check_invertible,
    init_model,
    initialize_actnorm,
    model_forward,
    model_inverse,
    model_parameters,
)
from tcinn.train.checkpoint import Checkpoint, checkpoint_from_model, model_from_checkpoint, save_checkpoint
from tcinn.train.optim import AdamState, adam_step, clip_grad_norm, lr_at_epoch

try:
    import psutil
except ImportError:
    psutil = None

logger = logging.getLogger("TCINN.Trainer")

LOSS_HEADER = ["epoch", "loss_total", "loss_forward", "loss_inverse", "lr"]
SHUFFLE_STREAM = 1
CHECKPOINT_NAME = "model.ckpt"
# max |f⁻¹(f(x)) − x| tolerated after an epoch
ROUNDTRIP_BOUNDS = {np.dtype(np.float32): 1e-4, np.dtype(np.float64): 1e-10}
LOSS_CURVE_NAME = "loss.csv"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    initial_lr: float = 1e-4
    halving_period: int = 50
    lam: float = 1.0
    batch_size: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_grad_norm: Optional[float] = None
    roundtrip_check: bool = True
    prefetch: int = 2
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be at least 1, got {self.epochs}")
        if self.initial_lr <= 0:
            raise ValidationError(f"initial_lr must be positive, got {self.initial_lr}")
        if self.halving_period < 1:
            raise ValidationError(f"halving_period must be at least 1, got {self.halving_period}")
        if self.lam < 0:
            raise ValidationError(f"lambda must be non-negative, got {self.lam}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.clip_grad_norm is not None and self.clip_grad_norm <= 0:
            raise ValidationError(f"clip_grad_norm must be positive when set, got {self.clip_grad_norm}")
        if self.prefetch < 1:
            raise ValidationError(f"prefetch depth must be at least 1, got {self.prefetch}")

    @property
    def channels(self) -> int:
        return self.model.channels


class LossComponents(NamedTuple):
    forward: Tensor
    inverse: Tensor


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    loss_total: float
    loss_forward: float
    loss_inverse: float
    lr: float
    roundtrip_error: float = math.nan


@dataclass
class LossCurve:
    records: List[LossRecord] = field(default_factory=list)

    def append(self, record: LossRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValidationError(
                f"loss curve epochs must increase: {record.epoch} after {self.records[-1].epoch}"
            )
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def totals(self) -> List[float]:
        return [record.loss_total for record in self.records]


def loss_hold(x_src: Tensor, y_tgt: Tensor, model: TCINNModel, lam: float) -> Tuple[Tensor, LossComponents]:
    """λ·MSE(f(x), y) + MSE(f⁻¹(y), x)."""
    if x_src.shape != y_tgt.shape:
        raise ShapeError(f"source {x_src.shape} and target {y_tgt.shape} shapes differ")
    forward_error = ops.reduce_mse(model_forward(x_src, model), y_tgt)
    inverse_error = ops.reduce_mse(model_inverse(y_tgt, model), x_src)
    total = ops.add(ops.scale(forward_error, lam), inverse_error)
    return total, LossComponents(forward_error, inverse_error)


def roundtrip_error(model: TCINNModel, x: Tensor) -> float:
    """max |f⁻¹(f(x)) − x|."""
    recovered = model_inverse(model_forward(x, model), model)
    return float(np.max(np.abs(recovered.data.astype(np.float64) - x.data.astype(np.float64))))


def write_loss_curve(curve: LossCurve, path: Union[str, os.PathLike]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOSS_HEADER)
        for r in curve.records:
            writer.writerow(
                [r.epoch] + [format_decimal(value) for value in (r.loss_total, r.loss_forward, r.loss_inverse, r.lr)]
            )
    return path


def read_loss_curve(path: Union[str, os.PathLike]) -> LossCurve:
    curve = LossCurve()
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != LOSS_HEADER:
            raise ValidationError(f"{path}: unexpected loss curve header {reader.fieldnames}")
        for row in reader:
            curve.append(
                LossRecord(
                    epoch=int(row["epoch"]),
                    loss_total=float(row["loss_total"]),
                    loss_forward=float(row["loss_forward"]),
                    loss_inverse=float(row["loss_inverse"]),
                    lr=float(row["lr"]),
                )
            )
    return curve


def load_dataset(manifest: DatasetManifest) -> Tuple[np.ndarray, np.ndarray]:
    """Stack every pair into N×1×H×W source and target arrays."""
    validate_manifest(manifest)
    sources = [load_image(entry.source) for entry in manifest.entries]
    targets = [load_image(entry.target) for entry in manifest.entries]
    return np.stack(sources), np.stack(targets)


class BatchPrefetcher:
    """Assembles augmented batches on a worker thread, handed over through a bounded queue.

    Batches come out in the order given by ``order``; errors raised on the
    worker are re-raised in the consuming thread.
    """

    _DONE = object()

    def __init__(
        self,
        sources: np.ndarray,
        targets: np.ndarray,
        order: Sequence[int],
        batch_size: int,
        channels: int,
        depth: int = 2,
    ):
        self.sources = sources
        self.targets = targets
        self.order = list(order)
        self.batch_size = batch_size
        self.channels = channels
        self._queue: "queue.Queue" = queue.Queue(maxsize=depth)
        self._stop = threading.Event()

    def _assemble(self, indices: List[int]) -> Tuple[Tensor, Tensor]:
        x = augment_channels(Tensor(self.sources[indices]), self.channels)
        y = augment_channels(Tensor(self.targets[indices]), self.channels)
        return x, y

    def _produce(self) -> None:
        try:
            for start in range(0, len(self.order), self.batch_size):
                if self._stop.is_set():
                    return
                self._queue.put(self._assemble(self.order[start : start + self.batch_size]))
        except Exception as exc:
            self._queue.put(exc)
        finally:
            self._queue.put(self._DONE)

    def __iter__(self) -> Iterator[Tuple[Tensor, Tensor]]:
        worker = threading.Thread(target=self._produce, daemon=True)
        worker.start()
        try:
            while True:
                item = self._queue.get()
                if item is self._DONE:
                    break
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            self._stop.set()
            while worker.is_alive():
                try:
                    self._queue.get(timeout=0.05)
                except queue.Empty:
                    pass
            worker.join()


def _memory_note() -> str:
    if psutil is None:
        return ""
    rss = psutil.Process().memory_info().rss / (1024 * 1024)
    return f", rss={rss:.0f}MiB"


def train(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    *,
    resume: Optional[Checkpoint] = None,
    history: Optional[LossCurve] = None,
    validate_only: bool = False,
    out_dir: Optional[Union[str, os.PathLike]] = None,
) -> Tuple[Checkpoint, LossCurve]:
    """Train a model on ``manifest``; returns the final checkpoint and the per-epoch loss curve.

    With ``validate_only`` the data and configuration are checked and the
    initial checkpoint is returned with an empty curve. With ``out_dir`` the
    checkpoint and loss CSV are written there. When resuming, ``history`` holds
    the earlier run's curve; its records before the resumed epoch are kept.
    """
    sources, targets = load_dataset(manifest)
    logger.info(
        "Training on %d pairs of %d×%d (C=%d, k=%d, epochs=%d, dtype=%s)",
        len(sources), sources.shape[2], sources.shape[3], cfg.channels, cfg.model.blocks,
        cfg.epochs, np.dtype(get_dtype()).name,
    )

    shuffle_rng = np.random.default_rng([cfg.seed, SHUFFLE_STREAM])
    if resume is not None:
        if resume.model_config != cfg.model:
            raise ConfigMismatchError(f"cannot resume: checkpoint config {resume.model_config} != {cfg.model}")
        model = model_from_checkpoint(resume)
        state = resume.optimizer
        start_epoch = resume.epoch
        if resume.rng_state:
            shuffle_rng.bit_generator.state = resume.rng_state
    else:
        model = init_model(cfg.seed, cfg.model)
        state = None
        start_epoch = 0
    params = model_parameters(model)
    if state is None or not state.first_moment:
        state = AdamState.zeros(params)

    curve = LossCurve()
    if resume is not None and history is not None:
        for record in history.records:
            if record.epoch < start_epoch:
                curve.append(record)
    if validate_only:
        ckpt = checkpoint_from_model(model, state, start_epoch, shuffle_rng.bit_generator.state)
        return ckpt, curve

    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        order = shuffle_rng.permutation(len(sources))
        sums = np.zeros(3)
        batches = 0
        probe: Optional[Tensor] = None
        for batch, (x, y) in enumerate(
            BatchPrefetcher(sources, targets, order, cfg.batch_size, cfg.channels, cfg.prefetch)
        ):
            if probe is None:
                probe = x
            if cfg.model.actnorm and any(
                b.actnorm is not None and not b.actnorm.initialized for b in model.blocks
            ):
                initialize_actnorm(model, x)
            with Tape() as tape:
                loss, parts = loss_hold(x, y, model, cfg.lam)
            if not loss.is_finite():
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {batch} (lr={lr:g}, lambda={cfg.lam:g})",
                    epoch=epoch,
                    batch=batch,
                )
            grads = backward(tape, loss, params.values())
            if cfg.clip_grad_norm is not None:
                grads, norm = clip_grad_norm(grads, cfg.clip_grad_norm)
                logger.debug("epoch %d batch %d gradient norm %.4g", epoch, batch, norm)
            try:
                adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            except NumericalError as exc:
                exc.epoch, exc.batch = epoch, batch
                raise
            check_invertible(model)
            sums += (loss.item(), parts.forward.item(), parts.inverse.item())
            batches += 1

        means = sums / max(batches, 1)
        rt_error = math.nan
        if cfg.roundtrip_check and probe is not None:
            rt_error = roundtrip_error(model, probe)
            bound = ROUNDTRIP_BOUNDS[np.dtype(get_dtype())]
            if not rt_error <= bound:
                raise NumericalError(
                    f"round trip error {rt_error:.3g} exceeds {bound:g} after epoch {epoch}",
                    epoch=epoch,
                )
        curve.append(LossRecord(epoch, means[0], means[1], means[2], lr, rt_error))
        logger.info(
            "epoch %d/%d loss=%.6g forward=%.6g inverse=%.6g lr=%.3g roundtrip=%.3g%s",
            epoch + 1, cfg.epochs, means[0], means[1], means[2], lr, rt_error, _memory_note(),
        )

    ckpt = checkpoint_from_model(model, state, cfg.epochs, shuffle_rng.bit_generator.state)
    if out_dir is not None:
        out_dir = Path(out_dir)
        save_checkpoint(ckpt, out_dir / CHECKPOINT_NAME)
        write_loss_curve(curve, out_dir / LOSS_CURVE_NAME)
    return ckpt, curve

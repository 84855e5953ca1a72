"""Cropping and per-image [0, 1] scaling, with the scale record that undoes it."""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from tcinn.autodiff.tensor import Tensor
from tcinn.errors import ShapeError, ValidationError

logger = logging.getLogger("TCINN.Data")

SCALE_SUFFIX = ".scale"
DECIMAL_DIGITS = 17


def format_decimal(value: float) -> str:
    """Positional notation with 17 significant digits; parses back to the same float."""
    return np.format_float_positional(float(value), precision=DECIMAL_DIGITS, unique=False, fractional=False, trim="k")


@dataclass(frozen=True)
class ScaleRecord:
    """Original value range of an image, in physical units."""

    min: float
    max: float

    def __post_init__(self):
        if not (np.isfinite(self.min) and np.isfinite(self.max)) or self.max <= self.min:
            raise ValidationError(f"scale record needs finite max > min, got ({self.min}, {self.max})")


IDENTITY_SCALE = ScaleRecord(0.0, 1.0)


def center_crop(img: Tensor, size: int) -> Tensor:
    """Centered size×size window of a 1×H×W image; odd remainders drop the bottom/right."""
    if img.ndim != 3:
        raise ShapeError(f"center_crop expects a 1×H×W image, got shape {img.shape}")
    _, h, w = img.shape
    if size < 1 or size > h or size > w:
        raise ValidationError(f"cannot crop {size}×{size} from {h}×{w}")
    top = (h - size) // 2
    left = (w - size) // 2
    return Tensor(img.data[:, top : top + size, left : left + size])


def normalize_minmax(img: Tensor) -> Tuple[Tensor, ScaleRecord]:
    data = img.data.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if not hi > lo:
        raise ValidationError("cannot normalize a constant image (no valid scale)")
    scaled = (data - lo) / (hi - lo)
    scaled[data == lo] = 0.0
    scaled[data == hi] = 1.0
    return Tensor(np.clip(scaled, 0.0, 1.0)), ScaleRecord(lo, hi)


def denormalize(img01: Tensor, rec: ScaleRecord) -> Tensor:
    return Tensor(img01.data.astype(np.float64) * (rec.max - rec.min) + rec.min)


def preprocess_image(raw: Tensor, size: int) -> Tuple[Tensor, ScaleRecord]:
    """Crop then scale to [0, 1]: the full preprocessing pipeline for one image."""
    return normalize_minmax(center_crop(raw, size))


def scale_path(path: Union[str, os.PathLike]) -> Path:
    path = Path(path)
    return path.with_name(path.name + SCALE_SUFFIX)


def write_scale_record(rec: ScaleRecord, path: Union[str, os.PathLike]) -> Path:
    """Write the ``path.scale`` sidecar next to the tensor file at ``path``."""
    sidecar = scale_path(path)
    sidecar.write_text(f"{format_decimal(rec.min)},{format_decimal(rec.max)}\n", encoding="utf-8")
    return sidecar


def read_scale_record(path: Union[str, os.PathLike]) -> ScaleRecord:
    """Sidecar of the tensor file at ``path``; a missing sidecar means identity scaling."""
    sidecar = scale_path(path)
    if not sidecar.exists():
        return IDENTITY_SCALE
    text = sidecar.read_text(encoding="utf-8").strip()
    try:
        lo, hi = (float(part) for part in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"{sidecar}: expected 'min,max', got {text!r}") from exc
    return ScaleRecord(lo, hi)

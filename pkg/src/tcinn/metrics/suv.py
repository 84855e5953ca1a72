"""Mean standardized uptake value over a volume of interest."""

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from tcinn.autodiff.tensor import Tensor
from tcinn.data.manifest import load_image
from tcinn.errors import EmptySupportError, ShapeError, ValidationError

VOI_THRESHOLD = 0.5


@dataclass(frozen=True)
class VOIMask:
    mask: np.ndarray
    voxel_volume_ml: float = 1.0

    def __post_init__(self):
        mask = np.asarray(self.mask)
        while mask.ndim > 2 and mask.shape[0] == 1:
            mask = mask[0]
        if mask.ndim != 2:
            raise ShapeError(f"VOI mask must be H×W, got shape {np.shape(self.mask)}")
        object.__setattr__(self, "mask", mask.astype(bool))
        if self.voxel_volume_ml <= 0:
            raise ValidationError(f"voxel volume must be positive, got {self.voxel_volume_ml}")

    @property
    def active(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def volume_ml(self) -> float:
        return self.active * self.voxel_volume_ml


@dataclass(frozen=True)
class SUVParams:
    injected_dose_mci: float
    body_weight_kg: float

    def __post_init__(self):
        if not self.injected_dose_mci > 0:
            raise ValidationError(f"injected dose must be positive, got {self.injected_dose_mci} mCi")
        if not self.body_weight_kg > 0:
            raise ValidationError(f"body weight must be positive, got {self.body_weight_kg} kg")


def load_voi_mask(path: Union[str, os.PathLike], voxel_volume_ml: float = 1.0) -> VOIMask:
    """Stored mask tensor, binarized at 0.5."""
    return VOIMask(load_image(Path(path))[0] >= VOI_THRESHOLD, voxel_volume_ml)


def suv_mean(activity_img: Union[Tensor, np.ndarray], mask: VOIMask, p: SUVParams) -> float:
    """Mean VOI activity (μCi/mL) · W[g] / ID[μCi], with a tissue density of 1 g/mL."""
    activity = np.asarray(activity_img.data if isinstance(activity_img, Tensor) else activity_img, dtype=np.float64)
    while activity.ndim > 2 and activity.shape[0] == 1:
        activity = activity[0]
    if activity.shape != mask.mask.shape:
        raise ShapeError(f"activity image {activity.shape} does not match VOI mask {mask.mask.shape}")
    if mask.active == 0:
        raise EmptySupportError("VOI mask has no active element")
    mean_activity = float(np.mean(activity[mask.mask]))
    weight_g = p.body_weight_kg * 1000.0
    dose_uci = p.injected_dose_mci * 1000.0
    return (mean_activity * weight_g) / dose_uci

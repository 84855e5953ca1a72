"""Deterministic synthetic source/target pairs with a known analytic mapping.

Each source is a sum of Gaussian blobs on a flat background. The target is a
pointwise-monotone function of the source, blended by a centered Gaussian mask:

    y(p) = M(p)·sqrt(x(p)) + (1 − M(p))·0.8·x(p),  M(p) = exp(−|p − c|² / (2σ_m²))

Pair ``i`` draws from its own generator seeded by ``(seed, i)``, so files do
not depend on generation order.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from tcinn.autodiff.tensor import get_precision
from tcinn.data.manifest import DatasetManifest, ManifestEntry, write_manifest
from tcinn.data.preprocess import IDENTITY_SCALE, write_scale_record
from tcinn.data.tensor_file import write_tensor_file
from tcinn.errors import ValidationError

logger = logging.getLogger("TCINN.Data")

MANIFEST_NAME = "manifest.csv"
VOI_THRESHOLD = 0.5


@dataclass(frozen=True)
class PhantomConfig:
    seed: int = 0
    size: int = 64
    pairs: int = 100
    min_blobs: int = 3
    max_blobs: int = 8
    background: float = 0.05
    target_gain: float = 0.8
    dtype: Optional[str] = None

    def __post_init__(self):
        if self.size < 16:
            raise ValidationError(f"phantom size must be at least 16, got {self.size}")
        if self.pairs < 1:
            raise ValidationError(f"phantom pair count must be at least 1, got {self.pairs}")
        if not 1 <= self.min_blobs <= self.max_blobs:
            raise ValidationError(f"invalid blob count range [{self.min_blobs}, {self.max_blobs}]")
        if self.dtype not in (None, "float32", "float64"):
            raise ValidationError(f"unsupported phantom dtype {self.dtype!r}")

    @property
    def numpy_dtype(self):
        return np.dtype(self.dtype or get_precision())


def modulation_mask(size: int) -> np.ndarray:
    """M(p) on a size×size grid, centered at the image center with σ = size/6."""
    center = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dist2 = (yy - center) ** 2 + (xx - center) ** 2
    return np.exp(-dist2 / (2.0 * (size / 6.0) ** 2))


def phantom_target(x: np.ndarray, mask: np.ndarray, gain: float = 0.8) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return mask * np.sqrt(np.clip(x, 0.0, None)) + (1.0 - mask) * gain * x


def phantom_source(cfg: PhantomConfig, index: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, index])
    size = cfg.size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    image = np.full((size, size), cfg.background)
    for _ in range(int(rng.integers(cfg.min_blobs, cfg.max_blobs + 1))):
        cy, cx = rng.uniform(0, size, size=2)
        sigma = rng.uniform(size / 16.0, size / 8.0)
        amplitude = rng.uniform(0.3, 0.9)
        image += amplitude * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
    return np.clip(image, 0.0, 1.0)


def generate_phantom_dataset(cfg: PhantomConfig, out_dir: Union[str, os.PathLike]) -> DatasetManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = cfg.numpy_dtype
    mask = modulation_mask(cfg.size)
    voi = (mask >= VOI_THRESHOLD).astype(dtype)[None]
    mask_path = write_tensor_file(voi, out_dir / "voi_mask.tcit")

    entries = []
    for index in range(cfg.pairs):
        # The target is computed from the stored (rounded) source so that the
        # analytic map can be re-applied to the file contents exactly.
        source = phantom_source(cfg, index).astype(dtype)
        target = phantom_target(source, mask, cfg.target_gain).astype(dtype)
        source_path = write_tensor_file(source[None], out_dir / f"source_{index:04d}.tcit")
        target_path = write_tensor_file(target[None], out_dir / f"target_{index:04d}.tcit")
        write_scale_record(IDENTITY_SCALE, source_path)
        write_scale_record(IDENTITY_SCALE, target_path)
        entries.append(ManifestEntry(source_path, target_path, mask_path))

    manifest = DatasetManifest(root=out_dir, entries=entries)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info("Generated %d phantom pairs (%d×%d, seed %d) in %s", cfg.pairs, cfg.size, cfg.size, cfg.seed, out_dir)
    return manifest

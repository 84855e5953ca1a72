"""Paired dataset manifests: ``source_path,target_path[,mask_path]`` per line."""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from tcinn.data.tensor_file import read_tensor_array
from tcinn.errors import ManifestError, TensorFileError

logger = logging.getLogger("TCINN.Data")

HEADER = "# source_path,target_path,mask_path"


@dataclass(frozen=True)
class ManifestEntry:
    source: Path
    target: Path
    mask: Optional[Path] = None


@dataclass
class DatasetManifest:
    """Entries hold absolute paths; the file stores them relative to ``root``."""

    root: Path
    entries: List[ManifestEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def _resolve(root: Path, raw: str) -> Path:
    candidate = Path(raw.strip())
    return candidate if candidate.is_absolute() else root / candidate


def load_manifest(path: Union[str, os.PathLike], validate: bool = True) -> DatasetManifest:
    path = Path(path)
    root = path.parent
    entries: List[ManifestEntry] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = [part for part in stripped.split(",")]
        if len(fields) not in (2, 3) or not all(part.strip() for part in fields):
            raise ManifestError(f"{path}:{lineno}: expected 'source,target[,mask]', got {stripped!r}")
        mask = _resolve(root, fields[2]) if len(fields) == 3 else None
        entries.append(ManifestEntry(_resolve(root, fields[0]), _resolve(root, fields[1]), mask))
    manifest = DatasetManifest(root=root, entries=entries)
    if validate:
        validate_manifest(manifest, source=str(path))
    return manifest


def write_manifest(manifest: DatasetManifest, path: Union[str, os.PathLike]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [HEADER]
    for entry in manifest.entries:
        fields = [entry.source, entry.target] + ([entry.mask] if entry.mask is not None else [])
        lines.append(",".join(_relative(p, path.parent) for p in fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Wrote manifest with %d pairs to %s", len(manifest), path)
    return path


def _relative(target: Path, root: Path) -> str:
    try:
        return Path(os.path.relpath(target, root)).as_posix()
    except ValueError:
        return Path(target).as_posix()


def _image_hw(array: np.ndarray, path: Path) -> Tuple[int, int]:
    if array.ndim == 2:
        return array.shape
    if array.ndim == 3 and array.shape[0] == 1:
        return array.shape[1:]
    raise ManifestError(f"{path}: expected a 1×H×W or H×W image, got shape {array.shape}")


def load_image(path: Path) -> np.ndarray:
    """Read one image as a 1×H×W array in its stored dtype."""
    array = read_tensor_array(path)
    h, w = _image_hw(array, path)
    return array.reshape(1, h, w)


def validate_manifest(manifest: DatasetManifest, source: str = "manifest") -> Tuple[int, int]:
    """Check every referenced file exists, parses and shares one H×W; return that H×W."""
    if not manifest.entries:
        raise ManifestError(f"{source}: no pairs listed")
    shape: Optional[Tuple[int, int]] = None
    for entry in manifest.entries:
        for path in (entry.source, entry.target, entry.mask):
            if path is None:
                continue
            if not path.exists():
                raise ManifestError(f"{source}: referenced file {path} does not exist")
            try:
                hw = load_image(path).shape[1:]
            except TensorFileError as exc:
                raise ManifestError(f"{source}: cannot parse {path}: {exc}") from exc
            if shape is None:
                shape = hw
            elif hw != shape:
                raise ManifestError(f"{source}: {path} is {hw[0]}×{hw[1]}, expected {shape[0]}×{shape[1]}")
    return shape


def load_pair(entry: ManifestEntry) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    source = load_image(entry.source)
    target = load_image(entry.target)
    mask = load_image(entry.mask) if entry.mask is not None else None
    return source, target, mask

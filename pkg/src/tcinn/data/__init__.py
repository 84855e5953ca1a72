"""Tensor container, preprocessing, manifests and the synthetic phantom dataset."""

from tcinn.data.manifest import (
    DatasetManifest,
    ManifestEntry,
    load_image,
    load_manifest,
    load_pair,
    validate_manifest,
    write_manifest,
)
from tcinn.data.phantom import PhantomConfig, generate_phantom_dataset, modulation_mask, phantom_target
from tcinn.data.preprocess import (
    IDENTITY_SCALE,
    ScaleRecord,
    center_crop,
    denormalize,
    normalize_minmax,
    preprocess_image,
    read_scale_record,
    write_scale_record,
)
from tcinn.data.tensor_file import read_tensor_array, read_tensor_file, write_tensor_file

__all__ = [
    "DatasetManifest",
    "IDENTITY_SCALE",
    "ManifestEntry",
    "PhantomConfig",
    "ScaleRecord",
    "center_crop",
    "denormalize",
    "generate_phantom_dataset",
    "load_image",
    "load_manifest",
    "load_pair",
    "modulation_mask",
    "normalize_minmax",
    "phantom_target",
    "preprocess_image",
    "read_scale_record",
    "read_tensor_array",
    "read_tensor_file",
    "validate_manifest",
    "write_manifest",
    "write_scale_record",
    "write_tensor_file",
]

"""The TCIT container: single tensors and multi-record bundles, CRC-64 protected.

Layout (little-endian throughout)::

    magic "TCIT" | version u8 | kind u8 | body ... | crc64 u64

Tensor body (kind 0): dtype u8 | ndim u8 | dims u32 × ndim | payload.
Bundle body (kind 1): meta_len u32 | meta (UTF-8 JSON) | count u32 |
count × (name_len u16 | name | dtype u8 | ndim u8 | dims | payload).

The checksum is CRC-64/XZ over every byte before it.
"""

import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple, Union

import crcmod
import numpy as np

from tcinn.autodiff.tensor import Tensor
from tcinn.errors import (
    BadMagicError,
    ChecksumError,
    PayloadMismatchError,
    UnsupportedVersionError,
)

logger = logging.getLogger("TCINN.Data")

MAGIC = b"TCIT"
VERSION = 1
KIND_TENSOR = 0
KIND_BUNDLE = 1

DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}

crc64_xz = crcmod.mkCrcFun(0x142F0E1EBA9EA3693, initCrc=0, rev=True, xorOut=0xFFFFFFFFFFFFFFFF)

_PREAMBLE = struct.Struct("<4sBB")
_TENSOR_HEAD = struct.Struct("<BB")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_CRC = struct.Struct("<Q")

PathLike = Union[str, os.PathLike]


def _as_array(value: Union[Tensor, np.ndarray]) -> np.ndarray:
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    dtype = np.dtype(array.dtype).newbyteorder("<")
    if dtype not in DTYPE_CODES:
        raise PayloadMismatchError(f"unsupported dtype {array.dtype}; only 32/64-bit floats are stored")
    return np.ascontiguousarray(array, dtype=dtype)


def _encode_array(array: np.ndarray) -> bytes:
    if array.ndim > 255:
        raise PayloadMismatchError(f"too many dimensions: {array.ndim}")
    head = _TENSOR_HEAD.pack(DTYPE_CODES[array.dtype], array.ndim)
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    return head + dims + array.tobytes(order="C")


class _Reader:
    def __init__(self, data: bytes, offset: int, end: int, source: str):
        self.data, self.offset, self.end, self.source = data, offset, end, source

    def take(self, size: int) -> bytes:
        if self.offset + size > self.end:
            raise PayloadMismatchError(f"{self.source}: record runs past the end of the body")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct) -> tuple:
        return fmt.unpack(self.take(fmt.size))

    def array(self) -> np.ndarray:
        code, ndim = self.unpack(_TENSOR_HEAD)
        if code not in CODE_DTYPES:
            raise PayloadMismatchError(f"{self.source}: unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        dtype = CODE_DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = self.take(count * dtype.itemsize)
        return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def _seal(body: bytes) -> bytes:
    return body + _CRC.pack(crc64_xz(body))


def _open(data: bytes, source: str, kind: int) -> _Reader:
    if len(data) < _PREAMBLE.size or data[:4] != MAGIC:
        raise BadMagicError(f"{source}: not a TCIT file")
    _, version, found_kind = _PREAMBLE.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"{source}: container version {version}, expected {VERSION}")
    if len(data) < _PREAMBLE.size + _CRC.size:
        raise ChecksumError(f"{source}: file is truncated")
    (stored,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if crc64_xz(data[: -_CRC.size]) != stored:
        raise ChecksumError(f"{source}: checksum mismatch (file corrupt or truncated)")
    if found_kind != kind:
        raise PayloadMismatchError(f"{source}: record kind {found_kind}, expected {kind}")
    return _Reader(data, _PREAMBLE.size, len(data) - _CRC.size, source)


def encode_tensor(value: Union[Tensor, np.ndarray]) -> bytes:
    return _seal(_PREAMBLE.pack(MAGIC, VERSION, KIND_TENSOR) + _encode_array(_as_array(value)))


def decode_tensor(data: bytes, source: str = "<bytes>") -> np.ndarray:
    reader = _open(data, source, KIND_TENSOR)
    array = reader.array()
    if reader.offset != reader.end:
        raise PayloadMismatchError(f"{source}: {reader.end - reader.offset} trailing payload bytes")
    return array


def write_tensor_file(t: Union[Tensor, np.ndarray], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(t))
    logger.debug("Wrote tensor %s to %s", _as_array(t).shape, path)
    return path


def read_tensor_file(path: PathLike) -> Tensor:
    """Read a tensor file; values are converted to the engine precision."""
    return Tensor(read_tensor_array(path))


def read_tensor_array(path: PathLike) -> np.ndarray:
    """Read a tensor file keeping its stored dtype."""
    path = Path(path)
    return decode_tensor(path.read_bytes(), str(path))


def encode_bundle(metadata: Mapping[str, Any], records: Mapping[str, np.ndarray]) -> bytes:
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts: List[bytes] = [
        _PREAMBLE.pack(MAGIC, VERSION, KIND_BUNDLE),
        _U32.pack(len(meta)),
        meta,
        _U32.pack(len(records)),
    ]
    for name, value in records.items():
        encoded = name.encode("utf-8")
        parts.extend((_U16.pack(len(encoded)), encoded, _encode_array(_as_array(value))))
    return _seal(b"".join(parts))


def decode_bundle(data: bytes, source: str = "<bytes>") -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    reader = _open(data, source, KIND_BUNDLE)
    (meta_len,) = reader.unpack(_U32)
    try:
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PayloadMismatchError(f"{source}: unreadable metadata ({exc})") from exc
    (count,) = reader.unpack(_U32)
    records: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack(_U16)
        name = reader.take(name_len).decode("utf-8")
        records[name] = reader.array()
    if reader.offset != reader.end:
        raise PayloadMismatchError(f"{source}: {reader.end - reader.offset} trailing payload bytes")
    return metadata, records

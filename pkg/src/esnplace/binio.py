"""Shared helpers for the little-endian binary snapshot formats.

Every snapshot file starts with a 16-byte prelude: an 8-byte ASCII magic tag
followed by a uint64 format version. All multi-byte values are little-endian.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

HEADER_STRUCT = struct.Struct("<8sQ")


def write_prelude(fh: BinaryIO, magic: bytes, version: int) -> None:
    if len(magic) != 8:
        raise ValueError(f"magic tag must be 8 bytes, got {len(magic)}")
    fh.write(HEADER_STRUCT.pack(magic, version))


def read_prelude(fh: BinaryIO, magic: bytes, max_version: int) -> int:
    """Read and validate the 16-byte prelude, returning the file version."""
    raw = fh.read(HEADER_STRUCT.size)
    if len(raw) != HEADER_STRUCT.size:
        raise ValueError("truncated file: missing header")
    got_magic, version = HEADER_STRUCT.unpack(raw)
    if got_magic != magic:
        raise ValueError(f"bad magic {got_magic!r}, expected {magic!r}")
    if not 1 <= version <= max_version:
        raise ValueError(f"unsupported format version {version}")
    return version


def write_i64(fh: BinaryIO, *values: int) -> None:
    fh.write(struct.pack(f"<{len(values)}q", *values))


def read_i64(fh: BinaryIO, count: int) -> tuple[int, ...]:
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated file: missing integer fields")
    return struct.unpack(f"<{count}q", raw)


def write_f64(fh: BinaryIO, *values: float) -> None:
    fh.write(struct.pack(f"<{len(values)}d", *values))


def read_f64(fh: BinaryIO, count: int) -> tuple[float, ...]:
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated file: missing float fields")
    return struct.unpack(f"<{count}d", raw)


def write_array(fh: BinaryIO, arr: np.ndarray, dtype: str) -> None:
    """Write `arr` row-major with the given little-endian dtype code."""
    np.ascontiguousarray(arr).astype(dtype, copy=False).tofile(fh)


def read_array(fh: BinaryIO, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    arr = np.fromfile(fh, dtype=dtype, count=count)
    if arr.size != count:
        raise ValueError("truncated file: missing array payload")
    return arr.reshape(shape)

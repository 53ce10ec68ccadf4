"""
PKV1 vector dump format

magic b"PKV1" | u32 count | u32 dim | count*dim float32, all little-endian, row-major.
Used for key/query/value ingestion, workload dumps and the file-backed cold arena.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from ..utils.errors import PkvFormatError

logger = logging.getLogger(__name__)

MAGIC = b"PKV1"
HEADER = struct.Struct("<4sII")
HEADER_SIZE = HEADER.size  # 12 bytes
_DTYPE = np.dtype("<f4")

PathLike = Union[str, Path]


def read_header(path: PathLike) -> Tuple[int, int]:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise PkvFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, count, dim = HEADER.unpack(raw)
    if magic != MAGIC:
        raise PkvFormatError(f"{path}: bad magic {magic!r}")
    expected = HEADER_SIZE + count * dim * _DTYPE.itemsize
    actual = path.stat().st_size
    if actual < expected:
        raise PkvFormatError(f"{path}: header says {count}x{dim} but file has {actual} bytes")
    return int(count), int(dim)


def write_pkv(path: PathLike, data: np.ndarray) -> None:
    arr = np.ascontiguousarray(data, dtype=_DTYPE)
    if arr.ndim != 2:
        raise PkvFormatError(f"PKV1 stores 2-D arrays, got shape {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes(order="C"))
    logger.debug("PKV1 written: %s (%d x %d)", path, arr.shape[0], arr.shape[1])


def read_pkv(path: PathLike, mmap: bool = False) -> np.ndarray:
    """
    PKV1 파일 읽기

    Args:
        path: dump 경로
        mmap: True면 read-only memmap 반환 (cold arena 용)

    Returns:
        (count, dim) float32 array
    """
    count, dim = read_header(path)
    if mmap:
        if count == 0:
            return np.zeros((0, dim), dtype=np.float32)
        return np.memmap(path, dtype=_DTYPE, mode="r", offset=HEADER_SIZE, shape=(count, dim))
    with open(path, "rb") as f:
        f.seek(HEADER_SIZE)
        buf = f.read(count * dim * _DTYPE.itemsize)
    return np.frombuffer(buf, dtype=_DTYPE).reshape(count, dim).astype(np.float32)


def append_pkv(path: PathLike, rows: np.ndarray) -> int:
    """Append rows and rewrite the header count; creates the file when missing. Returns the new count."""
    rows = np.ascontiguousarray(rows, dtype=_DTYPE)
    path = Path(path)
    if not path.exists():
        write_pkv(path, rows)
        return int(rows.shape[0])
    count, dim = read_header(path)
    if rows.ndim != 2 or rows.shape[1] != dim:
        raise PkvFormatError(f"{path}: cannot append shape {rows.shape} to dim {dim}")
    with open(path, "r+b") as f:
        f.seek(HEADER_SIZE + count * dim * _DTYPE.itemsize)
        f.write(rows.tobytes(order="C"))
        f.truncate()
        new_count = count + rows.shape[0]
        f.seek(0)
        f.write(HEADER.pack(MAGIC, new_count, dim))
    return int(new_count)

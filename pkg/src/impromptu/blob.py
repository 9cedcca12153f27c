"""IMPT1 tensor blob format.

Layout: magic `IMPT`, version u8 = 1, dtype u8 (0 = f32, 1 = u8), rank u8,
extents as little-endian u32, then the row-major payload (little-endian).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"IMPT"
VERSION = 1

_DTYPE_CODE = {"f32": 0, "u8": 1}
_CODE_NP = {0: np.dtype("<f4"), 1: np.dtype("u1")}


class BlobFormatError(ValueError):
    pass


def dump_array(arr: np.ndarray) -> bytes:
    if arr.dtype == np.float32:
        code, payload = 0, arr.astype("<f4", copy=False)
    elif arr.dtype == np.uint8:
        code, payload = 1, arr
    else:
        raise BlobFormatError(f"unsupported dtype {arr.dtype}")
    head = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(payload).tobytes()


def load_array(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise BlobFormatError("not an IMPT blob")
    version, code, rank = struct.unpack("<BBB", buf[4:7])
    if version != VERSION:
        raise BlobFormatError(f"unsupported blob version {version}")
    if code not in _CODE_NP:
        raise BlobFormatError(f"unknown dtype code {code}")
    need = 7 + 4 * rank
    if len(buf) < need:
        raise BlobFormatError("truncated blob header")
    shape = struct.unpack(f"<{rank}I", buf[7:need])
    dt = _CODE_NP[code]
    count = int(np.prod(shape)) if rank else 1
    if len(buf) != need + count * dt.itemsize:
        raise BlobFormatError(f"truncated blob payload: expected {count * dt.itemsize} bytes")
    arr = np.frombuffer(buf[need:], dtype=dt).reshape(shape)
    return arr.astype(np.float32) if code == 0 else arr.copy()


def write_blob(path, arr: np.ndarray):
    Path(path).write_bytes(dump_array(arr))


def read_blob(path) -> np.ndarray:
    return load_array(Path(path).read_bytes())

"""Writers (and a reader) for the engine's on-disk dataset format.

Implemented against the documented container contract: JSON manifest plus
DMX tensors (magic "DMX1", u32 element code 1=f32/2=u32, u32 ndim, u64 dims,
little-endian row-major payload), and 64-bit FNV-1a content hashes. The
adapter deliberately does not import the engine package.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DMX1"
ELEM_F32 = 1
ELEM_U32 = 2


def fnv1a64(data: bytes | str) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def write_tensor(path: Path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        code, packed = ELEM_F32, arr.astype("<f4")
    else:
        code, packed = ELEM_U32, arr.astype("<u4")
    header = struct.pack("<4sII", MAGIC, code, arr.ndim)
    header += b"".join(struct.pack("<Q", d) for d in arr.shape)
    Path(path).write_bytes(header + packed.tobytes(order="C"))


def read_tensor(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    code, ndim = struct.unpack_from("<II", data, 4)
    dims = struct.unpack_from("<" + "Q" * ndim, data, 12)
    header = 12 + 8 * ndim
    if len(data) != header + math.prod(dims) * 4:
        raise ValueError(f"{path}: size mismatch")
    dtype = "<f4" if code == ELEM_F32 else "<u4"
    return np.frombuffer(data, dtype=dtype, offset=header).reshape(dims)


def write_manifest(manifest: dict, path: Path) -> None:
    text = json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False,
                      allow_nan=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")

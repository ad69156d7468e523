"""PRMS parameter checkpoints.

Layout (little-endian): ``b"PRMS"``, u32 tensor count, then per tensor
u32 name length, UTF-8 name, u32 rows, u32 cols, rows*cols f32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"PRMS"


class CheckpointError(ValueError):
    pass


def dumps_params(params: dict[str, np.ndarray]) -> bytes:
    out = [_MAGIC, struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise CheckpointError(f"{name}: checkpoints store 2-D tensors")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<II", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def loads_params(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != _MAGIC:
        raise CheckpointError("not a PRMS checkpoint (bad magic)")
    try:
        (count,) = struct.unpack_from("<I", data, 4)
        off = 8
        params = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off : off + n].decode("utf-8")
            off += n
            rows, cols = struct.unpack_from("<II", data, off)
            off += 8
            size = 4 * rows * cols
            if off + size > len(data):
                raise CheckpointError(f"{name}: truncated payload")
            params[name] = np.frombuffer(data, "<f4", rows * cols, off).reshape(rows, cols).astype(np.float32)
            off += size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes after last tensor")
    return params


def save_params(params: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(dumps_params(params))


def load_params(path) -> dict[str, np.ndarray]:
    return loads_params(Path(path).read_bytes())

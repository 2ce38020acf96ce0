"""Binary parameter checkpoints (magic MVNN, float32 little-endian)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MVNN_MAGIC = b"MVNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(params: dict[str, np.ndarray], path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(MVNN_MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for name, arr in params.items():
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MVNN_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + nlen].decode()
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        params[name] = arr.copy()
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return params

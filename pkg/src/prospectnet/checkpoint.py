"""Binary parameter checkpoints.

Layout: the 8 magic bytes ``PNCKPT01`` followed by one record per parameter,
in sorted-name order::

    u64 name_len | name (utf-8) | u64 rank | rank x u64 dims | float64 payload

All integers and floats are little-endian.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"PNCKPT01"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<Q", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    pos = 8
    state: dict[str, np.ndarray] = {}

    def read(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated record at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    while pos < len(buf):
        (name_len,) = struct.unpack("<Q", read(8))
        name = read(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", read(8))
        dims = struct.unpack(f"<{rank}Q", read(8 * rank)) if rank else ()
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(read(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        if name in state:
            raise CheckpointError(f"{path}: duplicate parameter {name!r}")
        state[name] = arr
    return state

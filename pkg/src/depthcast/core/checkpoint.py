"""Checkpoint container: magic ``DSQ1``, little-endian, float32 payloads.

Layout: magic (4 bytes), record count (u32), then per record:
name length (u32), UTF-8 name, rank (u32), extents (u32 each), raw
little-endian IEEE-754 float32 values in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DSQ1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors):
    """Write a name -> float32 array mapping; insertion order is preserved."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f4")  # tobytes() below copies in C order
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(
            f"truncated checkpoint: needed {n} bytes for {what} at offset {f.tell() - len(data)}, got {len(data)}")
    return data


def load_checkpoint(path):
    """Read back a name -> float32 array mapping in file order."""
    out = {}
    with open(path, "rb") as f:
        magic = _read(f, 4, "magic")
        if magic != MAGIC:
            raise CheckpointError(f"bad magic at offset 0: expected {MAGIC!r}, got {magic!r}")
        (count,) = struct.unpack("<I", _read(f, 4, "record count"))
        for i in range(count):
            (nlen,) = struct.unpack("<I", _read(f, 4, f"name length of record {i}"))
            name = _read(f, nlen, f"name of record {i}").decode("utf-8")
            (rank,) = struct.unpack("<I", _read(f, 4, f"rank of {name}"))
            shape = struct.unpack(f"<{rank}I", _read(f, 4 * rank, f"extents of {name}")) if rank else ()
            n_vals = int(np.prod(shape)) if rank else 1
            raw = _read(f, 4 * n_vals, f"payload of {name}")
            out[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        trailing = f.read(1)
        if trailing:
            raise CheckpointError(f"unexpected trailing bytes at offset {f.tell() - 1}")
    return out

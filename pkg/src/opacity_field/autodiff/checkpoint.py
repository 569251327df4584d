"""Binary checkpoint container.

Layout (little-endian)::

    b"OFLD" | u32 version | u32 count |
    count x ( u32 name_len | utf-8 name | u32 rank | u32 dims[rank] | f32 payload )
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"OFLD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value), dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    buf = p.read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{p}: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{p}: unsupported version {version}")
    off = 12
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims).copy()
            off += 4 * n
            out[name] = arr
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{p}: truncated or corrupt ({exc})") from None
    return out

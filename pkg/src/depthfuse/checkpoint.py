"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"DFUSECK\\0"
    version    uint32
    config     uint64 byte length + UTF-8 JSON record
    count      uint64 number of blobs
    blob       uint64 name length + UTF-8 name,
               uint64 ndim, ndim x uint64 extents,
               uint64 element count + little-endian float32 data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DFUSECK\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, config: dict, blobs: dict[str, np.ndarray]) -> None:
    path = Path(path)
    record = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(record)), record,
             struct.pack("<Q", len(blobs))]
    for name, arr in blobs.items():
        arr = np.asarray(arr)
        data = np.ascontiguousarray(arr, dtype="<f4")
        key = name.encode("utf-8")
        parts.append(struct.pack("<Q", len(key)) + key)
        parts.append(struct.pack("<Q", arr.ndim) + b"".join(struct.pack("<Q", d) for d in arr.shape))
        parts.append(struct.pack("<Q", data.size) + data.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    def take_bytes(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = buf[pos:pos + n]
        pos += n
        return out

    (version,) = take("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format version {version}")
    (rec_len,) = take("<Q")
    config = json.loads(take_bytes(rec_len).decode("utf-8"))
    (count,) = take("<Q")
    blobs = {}
    for _ in range(count):
        (name_len,) = take("<Q")
        name = take_bytes(name_len).decode("utf-8")
        (ndim,) = take("<Q")
        shape = take("<" + "Q" * ndim) if ndim else ()
        (n,) = take("<Q")
        if n != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{path}: blob {name} has {n} values for shape {shape}")
        blobs[name] = np.frombuffer(take_bytes(4 * n), dtype="<f4").reshape(shape).copy()
    return config, blobs

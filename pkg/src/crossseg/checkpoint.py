"""Binary checkpoint files for named tensors.

Layout, all integers little-endian u32:

    "CMFD" | version | meta_len | meta JSON (UTF-8) | count |
    repeat count times: name_len | name UTF-8 | rank | dims... | f32 data

Floats are stored as little-endian float32; round-trips of float32 data
are bit-exact.  `meta` carries the model configuration document.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"CMFD"
VERSION = 1

_U32 = struct.Struct("<I")


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    """Write name -> ndarray pairs (cast to float32) plus a JSON meta doc."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(meta_bytes)), meta_bytes,
              _U32.pack(len(tensors))]
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        name_b = name.encode("utf-8")
        chunks.append(_U32.pack(len(name_b)))
        chunks.append(name_b)
        chunks.append(_U32.pack(data.ndim))
        for d in data.shape:
            chunks.append(_U32.pack(d))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path):
    """Read a checkpoint; returns (meta dict, name -> float32 ndarray)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}: {blob[:4]!r}")
    pos = 4

    def u32():
        nonlocal pos
        if pos + 4 > len(blob):
            raise CheckpointError(f"truncated checkpoint {path}")
        (v,) = _U32.unpack_from(blob, pos)
        pos += 4
        return v

    version = u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta_len = u32()
    if pos + meta_len > len(blob):
        raise CheckpointError(f"truncated checkpoint {path}")
    try:
        meta = json.loads(blob[pos:pos + meta_len].decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt meta document in {path}: {e}") from e
    pos += meta_len

    tensors = {}
    for _ in range(u32()):
        name_len = u32()
        if pos + name_len > len(blob):
            raise CheckpointError(f"truncated checkpoint {path}")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        rank = u32()
        dims = tuple(u32() for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = 4 * count
        if pos + nbytes > len(blob):
            raise CheckpointError(f"truncated tensor payload for {name!r} in {path}")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims).copy()
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"trailing bytes after tensor list in {path}")
    return meta, tensors

"""Flat binary container for named 64-bit parameter arrays.

Layout: magic, format version, entry count, then per entry a
length-prefixed utf-8 name, rank, dims, and raw little-endian float64
payload. The same encoding carries model checkpoints and client updates.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .params import ParameterSet

MAGIC = b"FSNPRM01"
VERSION = 1


def dumps(ps: ParameterSet, meta: dict[str, int] | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta = meta or {}
    buf.write(struct.pack("<II", VERSION, len(meta)))
    for key, val in sorted(meta.items()):
        kb = key.encode()
        buf.write(struct.pack("<Iq", len(kb), int(val)))
        buf.write(kb)
    buf.write(struct.pack("<I", len(ps)))
    for name, arr in ps.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(raw: bytes) -> tuple[ParameterSet, dict[str, int]]:
    buf = io.BytesIO(raw)
    if buf.read(8) != MAGIC:
        raise ValueError("not a parameter container (bad magic)")
    version, n_meta = struct.unpack("<II", buf.read(8))
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    meta = {}
    for _ in range(n_meta):
        klen, val = struct.unpack("<Iq", buf.read(12))
        meta[buf.read(klen).decode()] = val
    count = struct.unpack("<I", buf.read(4))[0]
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        nlen = struct.unpack("<I", buf.read(4))[0]
        name = buf.read(nlen).decode()
        ndim = struct.unpack("<I", buf.read(4))[0]
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf.read(8 * size), dtype="<f8").reshape(shape)
        arrays[name] = arr.copy()
    return ParameterSet(arrays), meta


def save(path, ps: ParameterSet, meta: dict[str, int] | None = None):
    with open(path, "wb") as f:
        f.write(dumps(ps, meta))


def load(path) -> tuple[ParameterSet, dict[str, int]]:
    with open(path, "rb") as f:
        return loads(f.read())

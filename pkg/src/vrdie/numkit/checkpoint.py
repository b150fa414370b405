"""TRK1 parameter container.

Layout (all integers little-endian)::

    b"TRK1" | u64 body_length | body
    body  = u32 count | entry * count
    entry = u32 name_len | utf-8 name | u32 ndim | u64 dim * ndim | f64 payload (row-major)
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TRK1"


class CheckpointError(ValueError):
    pass


def dumps(params: dict[str, np.ndarray]) -> bytes:
    body = io.BytesIO()
    body.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        body.write(struct.pack("<I", len(raw)))
        body.write(raw)
        body.write(struct.pack("<I", arr.ndim))
        body.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        body.write(arr.tobytes(order="C"))
    payload = body.getvalue()
    return MAGIC + struct.pack("<Q", len(payload)) + payload


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (size,) = struct.unpack_from("<Q", blob, 4)
    body = memoryview(blob)[12:]
    if len(body) != size:
        raise CheckpointError(f"body length {len(body)} != declared {size}")
    pos = 0

    def read(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, body, pos)
        pos += struct.calcsize(fmt)
        return vals

    (count,) = read("<I")
    out = {}
    for _ in range(count):
        (nlen,) = read("<I")
        name = bytes(body[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        (ndim,) = read("<I")
        shape = read(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
        out[name] = arr
    if pos != size:
        raise CheckpointError(f"{size - pos} trailing bytes after {count} entries")
    return out


def save(path: str | Path, params: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(params))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())

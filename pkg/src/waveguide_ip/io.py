"""Binary array container, CSV and JSON writers.

Container layout (all integers little-endian)::

    magic      8 bytes   b"WGIPARR\\0"
    version    uint16    1
    dtype tag  uint8     1 = float64, 2 = complex128
    ndim       uint8
    shape      ndim x uint64
    meta_len   uint32    length of the UTF-8 JSON metadata block
    meta       meta_len bytes
    payload    C-order little-endian array data
"""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "ContainerError",
    "MAGIC",
    "VERSION",
    "write_array",
    "read_array",
    "dumps_array",
    "loads_array",
    "write_csv",
    "write_json",
    "to_jsonable",
]

MAGIC = b"WGIPARR\0"
VERSION = 1
_TAGS = {1: np.dtype("<f8"), 2: np.dtype("<c16")}
_TAG_OF = {np.dtype("float64"): 1, np.dtype("complex128"): 2}


class ContainerError(ValueError):
    """Malformed or unsupported container."""


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": to_jsonable(float(obj.real)), "im": to_jsonable(float(obj.imag))}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps_array(arr, meta: dict | None = None) -> bytes:
    a = np.asarray(arr)
    if np.iscomplexobj(a):
        a = a.astype("<c16", copy=False)
        tag = 2
    else:
        if a.dtype.kind not in "fiub":
            raise ContainerError(f"unsupported dtype {a.dtype}")
        a = a.astype("<f8", copy=False)
        tag = 1
    if a.ndim > 255:
        raise ContainerError("too many dimensions")
    mb = json.dumps(to_jsonable(meta or {}), sort_keys=True).encode("utf-8")
    head = MAGIC + struct.pack("<HBB", VERSION, tag, a.ndim)
    head += struct.pack(f"<{a.ndim}Q", *a.shape) + struct.pack("<I", len(mb)) + mb
    return head + np.ascontiguousarray(a).tobytes(order="C")


def loads_array(buf: bytes):
    """Inverse of :func:`dumps_array`; returns ``(array, meta)``."""
    if len(buf) < 12 or buf[:8] != MAGIC:
        raise ContainerError("bad magic bytes")
    version, tag, ndim = struct.unpack_from("<HBB", buf, 8)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if tag not in _TAGS:
        raise ContainerError(f"unknown dtype tag {tag}")
    off = 12
    try:
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        (mlen,) = struct.unpack_from("<I", buf, off)
    except struct.error as exc:
        raise ContainerError("truncated header") from exc
    off += 4
    meta = json.loads(buf[off:off + mlen].decode("utf-8")) if mlen else {}
    off += mlen
    dt = _TAGS[tag]
    n = int(np.prod(shape)) if ndim else 1
    if len(buf) - off != n * dt.itemsize:
        raise ContainerError("payload size does not match the header shape")
    arr = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape).copy()
    return arr, meta


def write_array(path, arr, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(dumps_array(arr, meta))
    return path


def read_array(path):
    return loads_array(Path(path).read_bytes())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, rows, columns) -> Path:
    """Write dict rows with a fixed column order; floats use ``repr`` for exactness."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path

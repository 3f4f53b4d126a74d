"""QTEN: a minimal little-endian binary container for one dense tensor.

Layout: ``b"QTEN"``, version (u8, = 1), dtype (u8: 0 real64, 1 complex128),
ndim (u8), reserved (u8, = 0), ``ndim`` dims as u64, then the row-major
payload (complex values as interleaved re, im).
"""
from __future__ import annotations

import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "QtenError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedPayloadError",
    "TrailingBytesError",
    "encode_qten",
    "decode_qten",
    "write_qten",
    "read_qten",
    "atomic_write_bytes",
]

MAGIC = b"QTEN"
VERSION = 1
REAL64, COMPLEX128 = 0, 1
_HEADER = struct.Struct("<4sBBBB")
_DTYPES = {REAL64: np.dtype("<f8"), COMPLEX128: np.dtype("<c16")}


class QtenError(ValueError):
    """Malformed QTEN data."""


class BadMagicError(QtenError):
    pass


class UnsupportedVersionError(QtenError):
    pass


class TruncatedPayloadError(QtenError):
    pass


class TrailingBytesError(QtenError):
    pass


def encode_qten(tensor) -> bytes:
    """Serialize; real arrays are stored as real64, everything else as complex128."""
    a = np.asarray(tensor)
    if a.ndim == 0:
        raise ValueError("QTEN stores tensors of rank >= 1")
    if a.ndim > 255:
        raise ValueError("QTEN supports at most 255 dims")
    code = REAL64 if np.isrealobj(a) else COMPLEX128
    payload = np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes(order="C")
    dims = struct.pack(f"<{a.ndim}Q", *a.shape)
    return _HEADER.pack(MAGIC, VERSION, code, a.ndim, 0) + dims + payload


def decode_qten(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(f"header needs {_HEADER.size} bytes, got {len(data)}")
    magic, version, code, ndim, reserved = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported QTEN version {version}")
    if code not in _DTYPES:
        raise QtenError(f"unknown dtype code {code}")
    if reserved != 0:
        raise QtenError(f"reserved byte must be 0, got {reserved}")
    off = _HEADER.size
    if len(data) < off + 8 * ndim:
        raise TruncatedPayloadError("file ends inside the dims block")
    dims = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    need = _DTYPES[code].itemsize * math.prod(dims)
    have = len(data) - off
    if have < need:
        raise TruncatedPayloadError(f"payload has {have} bytes, expected {need}")
    if have > need:
        raise TrailingBytesError(f"{have - need} unexpected bytes after the payload")
    return np.frombuffer(data, dtype=_DTYPES[code], count=math.prod(dims), offset=off).reshape(dims).copy()


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_qten(path, tensor) -> None:
    atomic_write_bytes(path, encode_qten(tensor))


def read_qten(path) -> np.ndarray:
    return decode_qten(Path(path).read_bytes())

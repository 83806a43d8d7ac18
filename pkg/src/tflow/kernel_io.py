"""Binary kernel dumps.

Layout (all little-endian)::

    offset  size        content
    0       4           magic b"TFLK"
    4       4           format version (uint32, currently 1)
    8       4           number of axes n (uint32)
    12      4 n         axis lengths (uint32 each)
    12+4n   8           temperature tag (float64)
    20+4n   16 prod     entries in row-major order as (real, imag) float64 pairs

The round trip is bit-exact.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, IoError

MAGIC = b"TFLK"
VERSION = 1
_DTYPE = np.dtype("<c16")


@dataclass(frozen=True)
class KernelDump:
    values: np.ndarray
    T: float


def encode(values, T) -> bytes:
    arr = np.ascontiguousarray(np.asarray(values, dtype=_DTYPE))
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + struct.pack("<d", float(T)) + arr.tobytes()


def decode(blob: bytes) -> KernelDump:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise FormatError("not a kernel dump (bad magic)")
    version, ndim = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported kernel dump version {version}")
    off = 12 + 4 * ndim
    if len(blob) < off + 8:
        raise FormatError("truncated kernel dump header")
    shape = struct.unpack_from(f"<{ndim}I", blob, 12)
    (T,) = struct.unpack_from("<d", blob, off)
    off += 8
    size = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
    if len(blob) != off + size:
        raise FormatError(f"kernel dump has {len(blob) - off} data bytes, expected {size}")
    values = np.frombuffer(blob, dtype=_DTYPE, offset=off).reshape(shape).astype(complex)
    return KernelDump(values, T)


def dump_kernel(path, values, T) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(encode(values, T))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from None


def load_kernel(path) -> KernelDump:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from None
    return decode(blob)

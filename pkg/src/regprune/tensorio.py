"""Minimal binary tensor format (``.atnb``).

Layout, all little-endian::

    magic     4 bytes   b"ATNB"
    version   u32       1
    dtype     u8        0 = float32
    ndim      u8        >= 1
    dims      ndim x u64
    payload   row-major values
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ATNB"
VERSION = 1
DTYPES = {0: np.dtype("<f4")}
_CODES = {np.dtype("<f4"): 0}
_HEADER = struct.Struct("<4sIBB")


class TensorFormatError(ValueError):
    pass


class BadMagicError(TensorFormatError):
    pass


class BadVersionError(TensorFormatError):
    pass


class TruncatedError(TensorFormatError):
    pass


def encode_tensor(array):
    a = np.asarray(array)
    if a.ndim == 0:
        raise TensorFormatError("0-d tensors are not representable; reshape to (1,)")
    if a.ndim > 255:
        raise TensorFormatError("too many dimensions")
    a = np.ascontiguousarray(a, dtype="<f4")
    header = _HEADER.pack(MAGIC, VERSION, _CODES[a.dtype], a.ndim)
    dims = struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + dims + a.tobytes(order="C")


def decode_tensor(data, name="<bytes>"):
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"{name}: bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedError(f"{name}: truncated header")
    _, version, dtype_code, ndim = _HEADER.unpack_from(data)
    if version != VERSION:
        raise BadVersionError(f"{name}: unsupported version {version}, expected {VERSION}")
    if dtype_code not in DTYPES:
        raise TensorFormatError(f"{name}: unknown dtype code {dtype_code}")
    if ndim == 0:
        raise TensorFormatError(f"{name}: ndim 0 is not allowed")
    dims_end = _HEADER.size + 8 * ndim
    if len(data) < dims_end:
        raise TruncatedError(f"{name}: truncated header (dims)")
    dims = struct.unpack_from(f"<{ndim}Q", data, _HEADER.size)
    dtype = DTYPES[dtype_code]
    count = int(np.prod(dims, dtype=np.uint64))
    expected = dims_end + count * dtype.itemsize
    if len(data) < expected:
        raise TruncatedError(f"{name}: truncated payload ({len(data) - dims_end} of {expected - dims_end} bytes)")
    if len(data) > expected:
        raise TensorFormatError(f"{name}: {len(data) - expected} trailing bytes after payload")
    return np.frombuffer(data, dtype=dtype, count=count, offset=dims_end).reshape(dims).copy()


def write_tensor(array, path):
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path):
    path = Path(path)
    return decode_tensor(path.read_bytes(), str(path))

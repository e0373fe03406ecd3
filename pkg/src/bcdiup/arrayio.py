"""Bit-exact binary array container used by the pipeline files.

Layout (all little endian):

    magic   4 bytes  b"BCD1"
    version u32      currently 1
    dtype   u32      1 = real64, 2 = complex128 (interleaved re, im)
    ndim    u32
    dims    ndim x u64
    payload row-major values

Reads validate the header and reject non-finite payloads; writes are atomic
(temp file in the target directory, then rename), so round-trips are
byte-identical and interrupted writes never leave partial files.
"""

import os
import struct
import tempfile

import numpy as np

from .errors import NumericalError

MAGIC = b"BCD1"
VERSION = 1
DTYPE_REAL64 = 1
DTYPE_COMPLEX128 = 2

_CODES = {DTYPE_REAL64: np.dtype("<f8"), DTYPE_COMPLEX128: np.dtype("<c16")}


def _dtype_code(arr):
    if np.iscomplexobj(arr):
        return DTYPE_COMPLEX128
    return DTYPE_REAL64


def write_array(path, array):
    """Serialize an array to the container format atomically."""
    arr = np.asarray(array)
    code = _dtype_code(arr)
    arr = np.ascontiguousarray(arr, dtype=_CODES[code])
    header = MAGIC + struct.pack("<III", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.tobytes(order="C")
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".bcd-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_array(path):
    """Load an array, validating header, payload length and finiteness."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        head = fh.read(12)
        if len(head) != 12:
            raise ValueError(f"{path}: truncated header")
        version, code, ndim = struct.unpack("<III", head)
        if version != VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        if code not in _CODES:
            raise ValueError(f"{path}: unknown dtype code {code}")
        if ndim == 0 or ndim > 32:
            raise ValueError(f"{path}: implausible ndim {ndim}")
        raw_dims = fh.read(8 * ndim)
        if len(raw_dims) != 8 * ndim:
            raise ValueError(f"{path}: truncated dims")
        dims = struct.unpack(f"<{ndim}Q", raw_dims)
        dtype = _CODES[code]
        expected = int(np.prod(dims)) * dtype.itemsize
        payload = fh.read(expected + 1)
        if len(payload) != expected:
            raise ValueError(
                f"{path}: payload length {len(payload)} != expected {expected}"
            )
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{path}: payload contains non-finite values")
    return arr.copy()

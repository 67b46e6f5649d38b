"""Dense tensor helpers and the JCAT binary format.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order. float32 is
the working precision; float64 is accepted everywhere so reference
computations can run at higher precision. Nothing here broadcasts implicitly:
the only broadcasting operations in the package are :func:`masked_product`
and the position-embedding add in :mod:`hybridfss.p2b`.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import DimensionError, FormatError, MaskError, TruncatedFileError

DEFAULT_DTYPE = np.float32

JCAT_MAGIC = b"JCAT"
JCAT_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def as_tensor(x, dtype=None) -> np.ndarray:
    """Return ``x`` as a contiguous float array with every dimension >= 1.

    Float64 input keeps its precision unless ``dtype`` says otherwise; all
    other input is converted to float32.
    """
    arr = np.asarray(x)
    if dtype is None:
        dtype = np.float64 if arr.dtype == np.float64 else DEFAULT_DTYPE
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if arr.ndim == 0 or any(d < 1 for d in arr.shape):
        raise DimensionError(f"tensor dimensions must all be >= 1, got shape {arr.shape}")
    return arr


def result_dtype(*arrays: np.ndarray):
    """float64 if any operand is float64, else float32."""
    if any(np.asarray(a).dtype == np.float64 for a in arrays):
        return np.float64
    return DEFAULT_DTYPE


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    dtype = result_dtype(a, b)
    return np.matmul(a.astype(dtype, copy=False), b.astype(dtype, copy=False))


def softmax(t, axis: int) -> np.ndarray:
    t = np.asarray(t)
    if not -t.ndim <= axis < t.ndim:
        raise IndexError(f"axis {axis} out of range for tensor of rank {t.ndim}")
    shifted = t - t.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def relu(t) -> np.ndarray:
    return np.maximum(np.asarray(t), 0)


def check_binary(mask, name: str = "mask") -> np.ndarray:
    m = np.asarray(mask)
    if not np.all((m == 0) | (m == 1)):
        raise MaskError(f"{name} must contain only 0 and 1")
    return m


def masked_product(f, m) -> np.ndarray:
    """Multiply every channel of a C x H x W map by a binary H x W mask."""
    f = np.asarray(f)
    m = check_binary(m)
    if f.ndim != 3 or m.shape != f.shape[1:]:
        raise DimensionError(f"mask of shape {m.shape} does not match feature map {f.shape}")
    return f * m.astype(f.dtype, copy=False)[None, :, :]


def flatten_tokens(f: np.ndarray) -> np.ndarray:
    """C x H x W -> (H*W) x C, tokens in row-major (y-major, x-minor) order."""
    c = f.shape[0]
    return np.ascontiguousarray(f.reshape(c, -1).T)


def unflatten_tokens(tokens: np.ndarray, height: int, width: int) -> np.ndarray:
    """(H*W) x C -> C x H x W; inverse of :func:`flatten_tokens`."""
    return np.ascontiguousarray(tokens.T.reshape(-1, height, width))


def max_relative_error(actual, expected) -> float:
    """max|actual - expected| scaled by max|expected| (0 when both vanish)."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if actual.shape != expected.shape:
        raise DimensionError(f"cannot compare shapes {actual.shape} and {expected.shape}")
    diff = float(np.max(np.abs(actual - expected), initial=0.0))
    scale = float(np.max(np.abs(expected), initial=0.0))
    if scale == 0.0:
        return diff
    return diff / scale


# JCAT on-disk format

def encode_jcat(t) -> bytes:
    arr = np.asarray(t)
    if arr.dtype not in _CODE_FOR_DTYPE:
        raise FormatError(f"JCAT stores float32 or float64, not {arr.dtype}")
    if arr.ndim < 1 or arr.ndim > 255:
        raise FormatError(f"JCAT rank must be in [1, 255], got {arr.ndim}")
    if 0 in arr.shape:
        raise DimensionError(f"tensor dimensions must be >= 1, got {arr.shape}")
    code = _CODE_FOR_DTYPE[arr.dtype]
    header = JCAT_MAGIC + struct.pack("<BBB", JCAT_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes()
    return header + payload


def decode_jcat(buf: bytes) -> np.ndarray:
    if len(buf) < 7:
        if not JCAT_MAGIC.startswith(bytes(buf[:4])):
            raise FormatError("bad JCAT magic")
        raise TruncatedFileError("JCAT header truncated")
    if buf[:4] != JCAT_MAGIC:
        raise FormatError(f"bad JCAT magic {bytes(buf[:4])!r}")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != JCAT_VERSION:
        raise FormatError(f"unsupported JCAT version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown JCAT element type {code}")
    if rank == 0:
        raise FormatError("JCAT rank must be >= 1")
    offset = 7 + 4 * rank
    if len(buf) < offset:
        raise TruncatedFileError("JCAT dimension table truncated")
    dims = struct.unpack_from(f"<{rank}I", buf, 7)
    if any(d == 0 for d in dims):
        raise FormatError(f"JCAT dimensions must be >= 1, got {dims}")
    dtype = _DTYPE_CODES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) < offset + nbytes:
        raise TruncatedFileError(
            f"JCAT payload truncated: expected {nbytes} bytes, found {len(buf) - offset}"
        )
    if len(buf) > offset + nbytes:
        raise FormatError("trailing bytes after JCAT payload")
    data = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
    return data.reshape(dims).astype(dtype.newbyteorder("="), copy=True)


def save_jcat(path: str | os.PathLike, t) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_jcat(t))


def load_jcat(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_jcat(fh.read())

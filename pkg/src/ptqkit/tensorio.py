"""Dense float32 tensors (rank 1-3) and the PTQT binary file format.

File layout, all integers little-endian:

    magic   4 bytes  b"PTQT"
    version u32      1
    ndim    u32      1..3
    dims    ndim x u64
    payload product(dims) x little-endian float32, row-major

Save/load round trips are bit-identical; non-finite payloads are rejected
at the boundary so downstream range arithmetic never sees them.
"""

import struct
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, NumericError, TensorFormatError

MAGIC = b"PTQT"
VERSION = 1
MAX_RANK = 3
_HEADER = struct.Struct("<4sII")


def validate_tensor(t, what="tensor"):
    """Coerce to a float32 ndarray of rank 1-3 with finite values."""
    arr = np.asarray(t)
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise ConfigError(f"{what} rank must be 1..{MAX_RANK}, got {arr.ndim}")
    if arr.size == 0:
        raise ConfigError(f"{what} dims must all be positive, got {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} contains non-finite values")
    return arr


def save_tensor(t, path):
    """Write a tensor to ``path`` in the PTQT layout."""
    arr = validate_tensor(t)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def load_tensor(path):
    """Read a PTQT file back into a float32 ndarray."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size or blob[:4] != MAGIC:
        raise TensorFormatError(f"{path}: not a PTQT file")
    _, version, ndim = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if ndim < 1 or ndim > MAX_RANK:
        raise TensorFormatError(f"{path}: rank {ndim} outside 1..{MAX_RANK}")
    dims_end = _HEADER.size + 8 * ndim
    if len(blob) < dims_end:
        raise TensorFormatError(f"{path}: size mismatch (truncated dims)")
    dims = struct.unpack_from(f"<{ndim}Q", blob, _HEADER.size)
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"{path}: dims must all be positive, got {dims}")
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 4 * count
    if len(blob) != expected:
        raise TensorFormatError(
            f"{path}: size mismatch (expected {expected} bytes, got {len(blob)})"
        )
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    if not np.isfinite(flat).all():
        raise TensorFormatError(f"{path}: non-finite payload")
    return np.array(flat, dtype=np.float32).reshape(dims)


def matmul(a, b):
    """Matrix product with 64-bit accumulation, rounded to float32.

    Accepts float32 or float64 rank-2 arrays; the accumulation order per
    output element is fixed, so results are bit-stable regardless of
    backend or thread count.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigError(
            f"matmul requires rank-2 operands, got {a.shape} x {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul dim mismatch: {a.shape} x {b.shape}")
    return kernels.matmul_f32(a, b)

"""Numeric kernels: compiled extension when built, numpy fallback otherwise.

Both backends execute the same IEEE-754 double operation sequence per
element (the extension is compiled without FP contraction), so results are
bit-identical and the backend choice can never change a computed artifact.

Selection happens at import time; set PTQKIT_BACKEND={auto,c,python} to
force one side. ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

try:
    from . import _ckernels as _ext
except ImportError:
    _ext = None

_requested = os.environ.get("PTQKIT_BACKEND", "auto").lower()
if _requested == "python":
    _ext = None
elif _requested == "c" and _ext is None:
    raise ImportError("PTQKIT_BACKEND=c but ptqkit._ckernels is not built")
elif _requested not in ("auto", "c", "python"):
    raise ImportError(f"unknown PTQKIT_BACKEND value: {_requested!r}")

BACKEND = "python" if _ext is None else "c"


def _as_f64_2d(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"kernel input must be 2-D, got shape {arr.shape}")
    return arr


def _group_params(deltas, zps, groups):
    d = np.ascontiguousarray(deltas, dtype=np.float64).reshape(-1)
    z = np.ascontiguousarray(zps, dtype=np.int32).reshape(-1)
    if d.shape[0] != groups or z.shape[0] != groups:
        raise ValueError(
            f"expected {groups} group parameters, got {d.shape[0]}/{z.shape[0]}"
        )
    return d, z


# -- pure numpy implementations ---------------------------------------------

def py_quantize_grouped(x, deltas, zps, qmax):
    x = _as_f64_2d(x)
    d, z = _group_params(deltas, zps, x.shape[1])
    v = x / d
    r = np.where(v >= 0.0, np.floor(v + 0.5), np.ceil(v - 0.5))
    q = np.clip(r + z.astype(np.float64), 0.0, float(qmax))
    return q.astype(np.int32)


def py_dequantize_grouped(q, deltas, zps):
    q = np.ascontiguousarray(q, dtype=np.int32)
    if q.ndim != 2:
        raise ValueError(f"kernel input must be 2-D, got shape {q.shape}")
    d, z = _group_params(deltas, zps, q.shape[1])
    out = d * (q.astype(np.float64) - z.astype(np.float64))
    return out.astype(np.float32)


def py_fake_quant_grouped(x, deltas, zps, qmax):
    x = _as_f64_2d(x)
    d, z = _group_params(deltas, zps, x.shape[1])
    zf = z.astype(np.float64)
    v = x / d
    r = np.where(v >= 0.0, np.floor(v + 0.5), np.ceil(v - 0.5))
    q = np.clip(r + zf, 0.0, float(qmax))
    return (d * (q - zf)).astype(np.float32)


def py_matmul_f32(a, b):
    a = _as_f64_2d(a)
    b = _as_f64_2d(b)
    # In-order accumulation over the shared axis; per output element this is
    # the exact op sequence of the compiled triple loop.
    acc = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for t in range(a.shape[1]):
        acc += a[:, t, None] * b[t, :]
    return acc.astype(np.float32)


# -- dispatch ----------------------------------------------------------------

def quantize_grouped(x, deltas, zps, qmax):
    """Quantize x[rows, groups] to int32 with per-group (delta, zero_point)."""
    if _ext is None:
        return py_quantize_grouped(x, deltas, zps, qmax)
    x = _as_f64_2d(x)
    d, z = _group_params(deltas, zps, x.shape[1])
    return _ext.quantize_grouped(x, d, z, int(qmax))


def dequantize_grouped(q, deltas, zps):
    """Reconstruct float32 values delta * (q - zero_point) per group."""
    if _ext is None:
        return py_dequantize_grouped(q, deltas, zps)
    q = np.ascontiguousarray(q, dtype=np.int32)
    if q.ndim != 2:
        raise ValueError(f"kernel input must be 2-D, got shape {q.shape}")
    d, z = _group_params(deltas, zps, q.shape[1])
    return _ext.dequantize_grouped(q, d, z)


def fake_quant_grouped(x, deltas, zps, qmax):
    """Quantize-dequantize x[rows, groups] in one pass; returns float32."""
    if _ext is None:
        return py_fake_quant_grouped(x, deltas, zps, qmax)
    x = _as_f64_2d(x)
    d, z = _group_params(deltas, zps, x.shape[1])
    return _ext.fake_quant_grouped(x, d, z, int(qmax))


def matmul_f32(a, b):
    """a[r, k] @ b[k, c]: 64-bit in-order accumulation, rounded to float32."""
    if _ext is None:
        return py_matmul_f32(a, b)
    return _ext.matmul_f32(_as_f64_2d(a), _as_f64_2d(b))

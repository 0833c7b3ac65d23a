# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: grouped uniform quantization and float32 matmul.

Every arithmetic step is an IEEE-754 double operation in the same order as
the numpy fallback in ptqkit.kernels (the build disables FP contraction),
so results are bit-identical across backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, floor

cnp.import_array()


cdef inline double _round_half_away(double v) nogil:
    if v >= 0.0:
        return floor(v + 0.5)
    return ceil(v - 0.5)


def quantize_grouped(cnp.float64_t[:, ::1] x, cnp.float64_t[::1] deltas,
                     cnp.int32_t[::1] zps, int qmax):
    """Quantize x[r, g] with one (delta, zero_point) per column group."""
    cdef Py_ssize_t r = x.shape[0], g = x.shape[1]
    out_arr = np.empty((r, g), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double q
    for i in range(r):
        for j in range(g):
            q = _round_half_away(x[i, j] / deltas[j]) + <double>zps[j]
            if q < 0.0:
                q = 0.0
            if q > <double>qmax:
                q = <double>qmax
            out[i, j] = <cnp.int32_t>q
    return out_arr


def dequantize_grouped(cnp.int32_t[:, ::1] q, cnp.float64_t[::1] deltas,
                       cnp.int32_t[::1] zps):
    """Reconstruct float32 values delta * (q - z) per column group."""
    cdef Py_ssize_t r = q.shape[0], g = q.shape[1]
    out_arr = np.empty((r, g), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(r):
        for j in range(g):
            out[i, j] = <float>(deltas[j] * (<double>q[i, j] - <double>zps[j]))
    return out_arr


def fake_quant_grouped(cnp.float64_t[:, ::1] x, cnp.float64_t[::1] deltas,
                       cnp.int32_t[::1] zps, int qmax):
    """Quantize-dequantize x[r, g] in one pass."""
    cdef Py_ssize_t r = x.shape[0], g = x.shape[1]
    out_arr = np.empty((r, g), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double q, z
    for i in range(r):
        for j in range(g):
            z = <double>zps[j]
            q = _round_half_away(x[i, j] / deltas[j]) + z
            if q < 0.0:
                q = 0.0
            if q > <double>qmax:
                q = <double>qmax
            out[i, j] = <float>(deltas[j] * (q - z))
    return out_arr


def matmul_f32(cnp.float64_t[:, ::1] a, cnp.float64_t[:, ::1] b):
    """a[r, k] @ b[k, c] with in-order 64-bit accumulation, rounded to f32."""
    cdef Py_ssize_t r = a.shape[0], k = a.shape[1], c = b.shape[1]
    out_arr = np.empty((r, c), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double acc
    for i in range(r):
        for j in range(c):
            acc = 0.0
            for t in range(k):
                acc = acc + a[i, t] * b[t, j]
            out[i, j] = <float>acc
    return out_arr

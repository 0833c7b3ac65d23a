"""Uniform affine quantization with min-max, percentile, and MSE calibration.

A quantization group maps the clipped range [range_down, range_up] onto the
b-bit integer lattice:

    q    = clamp(round(x / delta) + zero_point, 0, 2^b - 1)
    xhat = delta * (q - zero_point)

Rounding is fixed to round-half-away-from-zero so every result is bit-exact
against a scalar oracle. Calibrated ranges are extended to include zero
before parameters are derived; this keeps the zero point inside [0, 2^b - 1]
without clamping and guarantees |x - xhat| <= delta/2 for in-range values
even when a group does not straddle zero.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, NumericError

MIN_BITS = 2
MAX_BITS = 16

# Shrink grid for MSE calibration: symmetric factors 0.50..1.00, step 0.02,
# searched from 1.00 down so ties keep the widest range.
MSE_ALPHA_GRID = tuple(a / 100.0 for a in range(100, 48, -2))

DEFAULT_PCT = (0.1, 99.9)


class GroupAxis(enum.Enum):
    PER_TENSOR = "tensor"
    PER_OUT_CHANNEL = "out-channel"
    PER_TOKEN = "token"


@dataclass(frozen=True)
class QuantParams:
    """Scale, zero point, bit width, and clipped range of one group."""

    delta: float
    zero_point: int
    bits: int
    range_down: float
    range_up: float

    def __post_init__(self):
        if not MIN_BITS <= self.bits <= MAX_BITS:
            raise ConfigError(f"bits must be in [{MIN_BITS}, {MAX_BITS}], got {self.bits}")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ConfigError(f"delta must be positive and finite, got {self.delta}")
        if not self.range_up > self.range_down:
            raise ConfigError(
                f"range_up must exceed range_down, got [{self.range_down}, {self.range_up}]"
            )
        if not 0 <= self.zero_point <= self.qmax:
            raise ConfigError(f"zero_point {self.zero_point} outside [0, {self.qmax}]")

    @property
    def qmax(self):
        return (1 << self.bits) - 1


def _round_half_away(v):
    return math.floor(v + 0.5) if v >= 0.0 else math.ceil(v - 0.5)


def params_from_range(lo, hi, bits):
    """Derive QuantParams for a group whose calibrated range is [lo, hi].

    The range is first extended to include zero. A fully degenerate group
    (lo == hi == 0) gets the centered lattice delta = 2^(1-b), z = 2^(b-1);
    a constant non-zero value sits exactly on the extended lattice and
    round-trips bit-exactly.
    """
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise NumericError(f"non-finite calibration range [{lo}, {hi}]")
    if hi < lo:
        raise ConfigError(f"inverted calibration range [{lo}, {hi}]")
    lo = min(float(lo), 0.0)
    hi = max(float(hi), 0.0)
    levels = (1 << bits) - 1
    if hi == lo:
        delta = 2.0 ** (1 - bits)
        z = 1 << (bits - 1)
        down = -z * delta
        return QuantParams(delta, z, bits, down, down + delta * levels)
    delta = (hi - lo) / levels
    z = int(_round_half_away(-lo / delta))
    z = min(max(z, 0), levels)
    return QuantParams(delta, z, bits, lo, hi)


# -- grouping ----------------------------------------------------------------

def _grouped(t, axis, dtype):
    """Reshape ``t`` to [rows, groups] (contiguous copy in ``dtype``)."""
    t = np.asarray(t)
    if axis is GroupAxis.PER_TENSOR:
        x2d = t.reshape(-1, 1)
    elif axis is GroupAxis.PER_OUT_CHANNEL:
        if t.ndim != 2:
            raise ConfigError(
                f"PER_OUT_CHANNEL requires rank-2 weights, got rank {t.ndim}"
            )
        x2d = t
    elif axis is GroupAxis.PER_TOKEN:
        if t.ndim == 3:
            x2d = t.transpose(0, 2, 1).reshape(-1, t.shape[1])
        elif t.ndim == 2:
            x2d = t.T
        else:
            raise ConfigError(f"PER_TOKEN requires a token axis, got rank {t.ndim}")
    else:
        raise ConfigError(f"unknown group axis {axis!r}")
    return np.ascontiguousarray(x2d, dtype=dtype)


def _restore(out2d, axis, shape):
    if axis is GroupAxis.PER_TENSOR:
        return out2d.reshape(shape)
    if axis is GroupAxis.PER_OUT_CHANNEL:
        return out2d
    if len(shape) == 3:
        s, t, n = shape
        return np.ascontiguousarray(out2d.reshape(s, n, t).transpose(0, 2, 1))
    return np.ascontiguousarray(out2d.T)


def _normalize_params(params, groups):
    if isinstance(params, QuantParams):
        params = [params]
    params = list(params)
    if len(params) != groups:
        raise ConfigError(f"expected {groups} group parameters, got {len(params)}")
    bits = {p.bits for p in params}
    if len(bits) != 1:
        raise ConfigError(f"mixed bit widths across groups: {sorted(bits)}")
    deltas = np.array([p.delta for p in params], dtype=np.float64)
    zps = np.array([p.zero_point for p in params], dtype=np.int32)
    return deltas, zps, params[0].qmax


def _check_finite(x2d, who):
    if not np.isfinite(x2d).all():
        raise NumericError(f"{who}: input contains non-finite values")


# -- calibration -------------------------------------------------------------

def calibrate_minmax(t, axis, bits):
    """Per-group [min, max] ranges (zero-extended) mapped to lattice params."""
    x2d = _grouped(t, axis, np.float64)
    _check_finite(x2d, "calibrate_minmax")
    lo = x2d.min(axis=0)
    hi = x2d.max(axis=0)
    return [params_from_range(lo[g], hi[g], bits) for g in range(x2d.shape[1])]


def calibrate_percentile(t, axis, bits, lo_pct=DEFAULT_PCT[0], hi_pct=DEFAULT_PCT[1]):
    """Range endpoints from linear-interpolation order statistics per group."""
    if not 0.0 <= lo_pct < hi_pct <= 100.0:
        raise ConfigError(f"percentiles must satisfy 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})")
    x2d = _grouped(t, axis, np.float64)
    _check_finite(x2d, "calibrate_percentile")
    lo, hi = np.percentile(x2d, [lo_pct, hi_pct], axis=0)
    return [params_from_range(lo[g], hi[g], bits) for g in range(x2d.shape[1])]


def calibrate_mse(t, axis, bits):
    """Pick the symmetric shrink factor minimizing fake-quant MSE per group."""
    x2d = _grouped(t, axis, np.float64)
    _check_finite(x2d, "calibrate_mse")
    groups = x2d.shape[1]
    lo0 = x2d.min(axis=0)
    hi0 = x2d.max(axis=0)
    live = hi0 > lo0
    qmax = (1 << bits) - 1

    best_alpha = np.ones(groups)
    if live.any():
        xl = np.ascontiguousarray(x2d[:, live])
        lol = lo0[live]
        hil = hi0[live]
        errs = np.empty((len(MSE_ALPHA_GRID), xl.shape[1]))
        for ai, alpha in enumerate(MSE_ALPHA_GRID):
            lo = np.minimum(alpha * lol, 0.0)
            hi = np.maximum(alpha * hil, 0.0)
            deltas = (hi - lo) / qmax
            v = -lo / deltas
            zps = np.clip(np.floor(v + 0.5), 0, qmax).astype(np.int32)
            fq = kernels.fake_quant_grouped(xl, deltas, zps, qmax)
            errs[ai] = ((xl - fq) ** 2).mean(axis=0)
        best_alpha[live] = np.asarray(MSE_ALPHA_GRID)[np.argmin(errs, axis=0)]

    return [
        params_from_range(best_alpha[g] * lo0[g], best_alpha[g] * hi0[g], bits)
        for g in range(groups)
    ]


# -- quantization ------------------------------------------------------------

def quantize(t, params, axis):
    """Map to the integer lattice; returns int32 with the input's shape."""
    t = np.asarray(t)
    x2d = _grouped(t, axis, np.float64)
    deltas, zps, qmax = _normalize_params(params, x2d.shape[1])
    q2d = kernels.quantize_grouped(x2d, deltas, zps, qmax)
    return _restore(q2d, axis, t.shape)


def dequantize(q, params, axis):
    """Reconstruct xhat = delta * (q - zero_point); returns float32."""
    q = np.asarray(q)
    q2d = _grouped(q, axis, np.int32)
    deltas, zps, qmax = _normalize_params(params, q2d.shape[1])
    if q2d.min() < 0 or q2d.max() > qmax:
        raise ConfigError(f"integer values outside [0, {qmax}]")
    out2d = kernels.dequantize_grouped(q2d, deltas, zps)
    return _restore(out2d, axis, q.shape)


def fake_quant(t, params, axis):
    """Quantize-dequantize in one pass; idempotent bitwise."""
    t = np.asarray(t)
    x2d = _grouped(t, axis, np.float64)
    deltas, zps, qmax = _normalize_params(params, x2d.shape[1])
    out2d = kernels.fake_quant_grouped(x2d, deltas, zps, qmax)
    return _restore(out2d, axis, t.shape)


# -- defaults shared by the scaling/analysis layers --------------------------

def fake_quant_activations(x, bits, pct=DEFAULT_PCT):
    """Per-tensor percentile-calibrated fake quantization (activation default)."""
    params = calibrate_percentile(x, GroupAxis.PER_TENSOR, bits, pct[0], pct[1])
    return fake_quant(x, params, GroupAxis.PER_TENSOR), params


def fake_quant_weights(w, bits):
    """Per-out-channel MSE-calibrated fake quantization (weight default)."""
    params = calibrate_mse(w, GroupAxis.PER_OUT_CHANNEL, bits)
    return fake_quant(w, params, GroupAxis.PER_OUT_CHANNEL), params


# -- JSON records -------------------------------------------------------------

def params_to_records(params, axis):
    """Serialize a parameter list to JSON-ready records."""
    if isinstance(params, QuantParams):
        params = [params]
    return [
        {
            "delta": p.delta,
            "zero_point": p.zero_point,
            "bits": p.bits,
            "range_down": p.range_down,
            "range_up": p.range_up,
            "axis": axis.value,
            "group_index": i,
        }
        for i, p in enumerate(params)
    ]


def params_from_records(records):
    """Inverse of params_to_records; returns (params, axis)."""
    if not records:
        raise ConfigError("empty parameter record list")
    axes = {r["axis"] for r in records}
    if len(axes) != 1:
        raise ConfigError(f"mixed axes in parameter records: {sorted(axes)}")
    axis = GroupAxis(records[0]["axis"])
    ordered = sorted(records, key=lambda r: r["group_index"])
    if [r["group_index"] for r in ordered] != list(range(len(records))):
        raise ConfigError("group_index values must cover 0..N-1")
    params = [
        QuantParams(
            delta=float(r["delta"]),
            zero_point=int(r["zero_point"]),
            bits=int(r["bits"]),
            range_down=float(r["range_down"]),
            range_up=float(r["range_up"]),
        )
        for r in ordered
    ]
    return params, axis

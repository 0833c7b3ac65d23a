"""Per-in-channel equivalent scaling for a linear layer Y = X W.

Dividing activations and multiplying weights by the same positive factors
leaves the product unchanged while shifting quantization difficulty from
activations to weights. ``gps_solve`` derives the factors in closed form
from a gain function: anchor the channel with the widest activation range
so its scaled activation and weight ranges match, then set every other
factor to the maximizer of the per-channel gain

    g(s2) = (A + B)/2 - s2^2/(2 s1^2) * A - s1^2/(2 s2^2) * B,

whose optimum is s1 * (B/A)^(1/4); the data-driven estimate uses the ratio
of aggregated |dW x| to |W dx| magnitudes. ``smoothquant_baseline`` is the
power-law range-balancing comparison point.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .quantcore import DEFAULT_PCT, fake_quant_activations, fake_quant_weights

ZERO_STAT_GUARD = 1e-12
FACTOR_CLIP = 1e3
SMOOTH_FLOOR = 1e-5


def _rows(x, what="activations"):
    x = np.asarray(x)
    if x.ndim == 2:
        return x
    if x.ndim == 3:
        return x.reshape(-1, x.shape[2])
    raise ConfigError(f"{what} must be rank 2 or 3, got rank {x.ndim}")


def _check_scaling(s, n):
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if s.shape[0] != n:
        raise ConfigError(f"scaling length {s.shape[0]} != channel count {n}")
    if not np.isfinite(s).all() or (s <= 0).any():
        raise ConfigError("scaling factors must be positive and finite")
    return s


def equivalent_scale(x, w, s):
    """Return (X / s, s * W) as float64 arrays.

    The transform stays in float64 so X'W' matches XW elementwise to the
    1e-4 relative level even on near-cancelling outputs; files round to
    float32 only at the I/O boundary.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    if w.ndim != 2:
        raise ConfigError(f"weights must be rank 2, got rank {w.ndim}")
    if x.shape[-1] != w.shape[0]:
        raise ConfigError(f"channel mismatch: activations {x.shape} vs weights {w.shape}")
    s = _check_scaling(s, w.shape[0])
    return x.astype(np.float64) / s, w.astype(np.float64) * s[:, None]


@dataclass(frozen=True)
class ChannelErrorStats:
    """Per-in-channel aggregates of data and quantization-error magnitudes.

    Products are summed over calibration samples and tokens; |dW x| and
    |W dx| factor into (sum_j |dW_ij|) * (sum_rows |x_i|) etc. exactly.
    """

    x_rms: np.ndarray
    dx_rms: np.ndarray
    w_abs: np.ndarray
    dw_abs: np.ndarray
    prod_dw_x: np.ndarray
    prod_w_dx: np.ndarray


def gather_error_stats(x, w, bits_a, bits_w, pct=DEFAULT_PCT):
    """Fake-quantize X (per-tensor percentile) and W (per-out-channel MSE),
    then aggregate per-in-channel error statistics."""
    xr = _rows(x)
    w = np.asarray(w)
    if w.ndim != 2 or xr.shape[1] != w.shape[0]:
        raise ConfigError(f"shape mismatch: activations {xr.shape} vs weights {w.shape}")
    if xr.shape[0] < 1:
        raise ConfigError("need at least one calibration sample")

    xq, _ = fake_quant_activations(xr, bits_a, pct)
    wq, _ = fake_quant_weights(w, bits_w)
    x64 = xr.astype(np.float64)
    w64 = w.astype(np.float64)
    dx = x64 - xq
    dw = w64 - wq

    rows = x64.shape[0]
    x_abs = np.abs(x64).sum(axis=0)
    dx_abs = np.abs(dx).sum(axis=0)
    w_abs = np.abs(w64).sum(axis=1)
    dw_abs = np.abs(dw).sum(axis=1)
    return ChannelErrorStats(
        x_rms=np.sqrt((x64 * x64).sum(axis=0) / rows),
        dx_rms=np.sqrt((dx * dx).sum(axis=0) / rows),
        w_abs=w_abs,
        dw_abs=dw_abs,
        prod_dw_x=dw_abs * x_abs,
        prod_w_dx=w_abs * dx_abs,
    )


def anchor_factor(r_x_max, r_w_anchor):
    """sqrt(R_x / R_w) for the anchor channel; equalizes its scaled ranges."""
    if not r_x_max > 0 or not r_w_anchor > 0:
        raise ConfigError(
            f"anchor ranges must be positive, got R_x={r_x_max}, R_w={r_w_anchor}"
        )
    return float(np.sqrt(r_x_max / r_w_anchor))


def scaling_gain(s2, s1, a, b):
    """Gain of moving a channel's factor to s2 given anchor factor s1.

    a aggregates W^2 dx^2 (activation-error side), b aggregates dW^2 x^2
    (weight-error side). Pure arithmetic; accepts arrays for s2. Factored
    as 0.5 a (1 - r^2) + 0.5 b (1 - 1/r^2) with r = s2/s1 so the gain is
    exactly zero at s2 == s1.
    """
    r = np.asarray(s2, dtype=np.float64) / s1
    rr = r * r
    return 0.5 * a * (1.0 - rr) + 0.5 * b * (1.0 - 1.0 / rr)


def gain_optimal_factor(s1, a, b):
    """Closed-form maximizer of scaling_gain: s1 * (b/a)^(1/4)."""
    if not a > 0 or not b > 0:
        raise ConfigError(f"gain terms must be positive, got a={a}, b={b}")
    return float(s1 * (b / a) ** 0.25)


def channel_range(x):
    """Per-channel max-min over all samples and tokens."""
    xr = _rows(x).astype(np.float64)
    return xr.max(axis=0) - xr.min(axis=0)


def gps_solve(x, w, bits_a=6, bits_w=6, pct=DEFAULT_PCT, clip_factors=True):
    """Closed-form per-channel scaling factors.

    The anchor channel k (largest activation range) gets sqrt(R_x^k / R_w^k)
    with R_w^k the value range of weight row k; every other channel gets
    s_k * sqrt(sum|dW x|) / sqrt(sum|W dx|). Channels whose aggregates fall
    under ZERO_STAT_GUARD keep s_i = 1 (the ratio is undefined there).
    clip_factors bounds s to [1e-3, 1e3] * s_k; pass False for strict mode.
    """
    w = np.asarray(w)
    stats = gather_error_stats(x, w, bits_a, bits_w, pct)
    ranges = channel_range(x)
    k = int(np.argmax(ranges))
    w64 = w.astype(np.float64)
    r_w = float(w64[k].max() - w64[k].min())
    s_k = anchor_factor(float(ranges[k]), r_w)

    guard = (stats.prod_dw_x < ZERO_STAT_GUARD) | (stats.prod_w_dx < ZERO_STAT_GUARD)
    safe_den = np.where(guard, 1.0, stats.prod_w_dx)
    safe_num = np.where(guard, 1.0, stats.prod_dw_x)
    s = np.where(guard, 1.0, s_k * np.sqrt(safe_num) / np.sqrt(safe_den))
    s[k] = s_k
    if np.isnan(s).any():
        raise NumericError("NaN in channel statistics while solving scaling factors")
    if clip_factors:
        s = np.clip(s, s_k / FACTOR_CLIP, s_k * FACTOR_CLIP)
    if (s <= 0).any() or not np.isfinite(s).all():
        raise NumericError("scaling factors must be positive and finite")
    return s


def smoothquant_baseline(x, w, alpha=0.5):
    """Power-law range balancing: s_i = max|x_i|^alpha / max|W_i|^(1-alpha).

    Rows with all-zero weights keep s_i = 1 (the ratio diverges there);
    everything is floored at SMOOTH_FLOOR.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    xr = _rows(x)
    w = np.asarray(w)
    if w.ndim != 2 or xr.shape[1] != w.shape[0]:
        raise ConfigError(f"shape mismatch: activations {xr.shape} vs weights {w.shape}")
    a = np.abs(xr.astype(np.float64)).max(axis=0)
    wmax = np.abs(w.astype(np.float64)).max(axis=1)
    dead = wmax == 0.0
    s = np.where(dead, 1.0, a**alpha / np.where(dead, 1.0, wmax) ** (1.0 - alpha))
    return np.maximum(s, SMOOTH_FLOOR)


def fuse_scaling(norm_gain, norm_bias, s):
    """Fold 1/s into a preceding per-channel affine: gain/s, bias/s.

    The affine then emits X/s natively and the runtime division disappears.
    """
    gain = np.asarray(norm_gain, dtype=np.float64).reshape(-1)
    bias = np.asarray(norm_bias, dtype=np.float64).reshape(-1)
    if gain.shape != bias.shape:
        raise ConfigError(f"gain/bias length mismatch: {gain.shape} vs {bias.shape}")
    s = _check_scaling(s, gain.shape[0])
    return (gain / s).astype(np.float32), (bias / s).astype(np.float32)

"""Numerical validation harness for the scaling and quantization math.

Everything here either measures a quantity the closed-form derivations
predict (loss decomposition, approximation biases, range tracking) or
provides the brute-force oracle those predictions are checked against
(log-grid gain search, perturbation study).

Loss components use output-space MSE summed over samples/tokens and
averaged over output channels; second-derivative factors of the task loss
are treated as a common constant, so they cancel from every ratio.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .gps import channel_range, equivalent_scale, scaling_gain
from .quantcore import (
    DEFAULT_PCT,
    GroupAxis,
    calibrate_minmax,
    fake_quant,
    fake_quant_activations,
    fake_quant_weights,
)
from .stwq import TokenMode, apply_token_plan, build_token_plan, dynamic_token_quant
from .tensorio import matmul

# Pairing rule used by range_after_scaling_check: the predicted scaled range
# of an output channel is its unscaled range times the larger scale factor
# of the two rows attaining the column extremes.
RANGE_CHECK_RULE = "range times max scale of the rows attaining the column extremes"


def _rows(x, what="activations"):
    x = np.asarray(x)
    if x.ndim == 2:
        return x
    if x.ndim == 3:
        return x.reshape(-1, x.shape[2])
    raise ConfigError(f"{what} must be rank 2 or 3, got rank {x.ndim}")


def _loss(ya, yb):
    """Sum over rows, mean over output channels, of the squared deviation."""
    d = np.asarray(ya, dtype=np.float64) - np.asarray(yb, dtype=np.float64)
    return float((d * d).mean(axis=1).sum())


# -- loss decomposition -------------------------------------------------------

@dataclass(frozen=True)
class LossBreakdown:
    """Output-MSE components of joint activation/weight quantization.

    e_x_hat is the activation loss measured under already-quantized weights
    (joint loss minus weight loss, clamped at zero). cross_term_* hold the
    absolute gap between the full quadratic loss and its diagonal
    approximation; the raw gaps are signed, the report stores |gap|.
    """

    e_x: float
    e_x_hat: float
    e_w: float
    e_total: float
    cross_term_w: float
    cross_term_x: float


def loss_decompose(x, w, bits_a, bits_w, pct=DEFAULT_PCT):
    xr = _rows(x)
    w = np.asarray(w)
    if w.ndim != 2 or xr.shape[1] != w.shape[0]:
        raise ConfigError(f"shape mismatch: activations {xr.shape} vs weights {w.shape}")
    xq, _ = fake_quant_activations(xr, bits_a, pct)
    wq, _ = fake_quant_weights(w, bits_w)

    y = matmul(xr, w)
    e_x = _loss(matmul(xq, w), y)
    e_w = _loss(matmul(xr, wq), y)
    e_total = _loss(matmul(xq, wq), y)
    e_x_hat = max(e_total - e_w, 0.0)

    x64 = xr.astype(np.float64)
    w64 = w.astype(np.float64)
    dx = x64 - xq
    dw = w64 - wq
    full_w = float(((x64 @ dw) ** 2).mean(axis=1).sum())
    diag_w = float(((x64 * x64) @ (dw * dw)).mean(axis=1).sum())
    full_x = float(((dx @ w64) ** 2).mean(axis=1).sum())
    diag_x = float(((dx * dx) @ (w64 * w64)).mean(axis=1).sum())
    return LossBreakdown(
        e_x=e_x,
        e_x_hat=e_x_hat,
        e_w=e_w,
        e_total=e_total,
        cross_term_w=abs(full_w - diag_w),
        cross_term_x=abs(full_x - diag_x),
    )


# -- ordering statistics ------------------------------------------------------

@dataclass(frozen=True)
class Remark1Report:
    """Over ordered channel pairs with R_i > R_j: how often the scaling is
    monotone (s_i > s_j) and the scaled ranges keep their order."""

    frac_s_monotone: float
    frac_range_preserved: float
    pair_count: int


def remark1_check(x, s):
    r = channel_range(x)
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if s.shape[0] != r.shape[0]:
        raise ConfigError(f"scaling length {s.shape[0]} != channel count {r.shape[0]}")
    cond = r[:, None] > r[None, :]
    count = int(cond.sum())
    if count == 0:
        return Remark1Report(0.0, 0.0, 0)
    s_ok = s[:, None] > s[None, :]
    scaled = r / s
    r_ok = scaled[:, None] > scaled[None, :]
    return Remark1Report(
        frac_s_monotone=float((cond & s_ok).sum() / count),
        frac_range_preserved=float((cond & r_ok).sum() / count),
        pair_count=count,
    )


# -- oracles ------------------------------------------------------------------

def oracle_grid_search(s1, a, b, grid_points=2000):
    """Brute-force maximizer of scaling_gain on a log grid [s1/100, 100*s1]."""
    if not a > 0 or not b > 0:
        raise ConfigError(f"gain terms must be positive, got a={a}, b={b}")
    if grid_points < 100:
        raise ConfigError(f"grid_points must be >= 100, got {grid_points}")
    grid = np.logspace(math.log10(s1 / 100.0), math.log10(s1 * 100.0), grid_points)
    gains = scaling_gain(grid, s1, a, b)
    i = int(np.argmax(gains))
    return float(grid[i]), float(gains[i])


# -- end-to-end quantized-output error ----------------------------------------

def quantized_output_mse(
    x,
    w,
    s=None,
    bits_a=6,
    bits_w=6,
    pct=DEFAULT_PCT,
    token_mode="tensor",
    sink_threshold=4.0,
    w_method="mse",
):
    """Plain-mean MSE between the FP output and the fake-quantized output.

    token_mode selects how activations are quantized: per-tensor percentile
    ("tensor"), a static plan built from the input ("per-position" /
    "sink-split"), or dynamic per-position min-max ("dynamic"). Weights are
    per-out-channel, calibrated by MSE search ("mse", the toolkit default)
    or plain min-max ("minmax", the range-tracking choice under which
    scaled weight errors grow exactly with the scale factors).
    """
    x = np.asarray(x)
    w = np.asarray(w)
    xr = _rows(x)
    if w.ndim != 2 or xr.shape[1] != w.shape[0]:
        raise ConfigError(f"shape mismatch: activations {xr.shape} vs weights {w.shape}")
    y_ref = matmul(xr, w).astype(np.float64)

    if s is not None:
        xs, ws = equivalent_scale(x, w, s)
    else:
        xs, ws = x, w

    if token_mode == "tensor":
        xq, _ = fake_quant_activations(xs, bits_a, pct)
    elif token_mode in ("per-position", "sink-split"):
        if xs.ndim != 3:
            raise ConfigError("token modes require [samples, tokens, channels] activations")
        plan = build_token_plan(
            xs, bits_a, pct=pct, mode=TokenMode(token_mode), sink_threshold=sink_threshold
        )
        xq = apply_token_plan(xs, plan)
    elif token_mode == "dynamic":
        if xs.ndim != 3:
            raise ConfigError("token modes require [samples, tokens, channels] activations")
        xq = dynamic_token_quant(xs, bits_a)
    else:
        raise ConfigError(f"unknown token_mode {token_mode!r}")

    if w_method == "mse":
        wq, _ = fake_quant_weights(ws, bits_w)
    elif w_method == "minmax":
        wq = fake_quant(
            ws, calibrate_minmax(ws, GroupAxis.PER_OUT_CHANNEL, bits_w),
            GroupAxis.PER_OUT_CHANNEL,
        )
    else:
        raise ConfigError(f"unknown w_method {w_method!r}")
    y_q = matmul(_rows(xq), wq).astype(np.float64)
    return float(((y_ref - y_q) ** 2).mean())


@dataclass(frozen=True)
class PerturbationResult:
    baseline: float
    errors: tuple


def perturbation_study(
    x, w, s, trials, amplitude, seed, bits_a=6, bits_w=6, pct=DEFAULT_PCT,
    w_method="mse",
):
    """Quantized-output MSE under uniform +-amplitude perturbations of s.

    Each trial multiplies s elementwise by (1 + U(-amplitude, amplitude));
    a draw producing any non-positive factor is resampled. All randomness
    comes from the given seed.
    """
    if not 0.0 < amplitude < 1.0:
        raise ConfigError(f"amplitude must lie in (0, 1), got {amplitude}")
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    rng = np.random.default_rng(seed)
    baseline = quantized_output_mse(x, w, s, bits_a, bits_w, pct, w_method=w_method)
    errors = []
    for _ in range(trials):
        while True:
            perturbed = s * (1.0 + rng.uniform(-amplitude, amplitude, size=s.shape[0]))
            if (perturbed > 0).all():
                break
        errors.append(
            quantized_output_mse(x, w, perturbed, bits_a, bits_w, pct, w_method=w_method)
        )
    return PerturbationResult(baseline=baseline, errors=tuple(errors))


# -- approximation biases -----------------------------------------------------

@dataclass(frozen=True)
class BiasReport:
    """Measured-vs-approximated quantities with |bias| and |bias|/truth.

    Losses (cross-term section) are MSE-reduced; the scaled-error section
    uses L1 norms, summed over rows and averaged over channels.
    """

    ew_real: float
    ew_appro: float
    ew_bias: float
    ew_bias_ratio: float
    ex_real: float
    ex_appro: float
    ex_bias: float
    ex_bias_ratio: float
    ub_real: float
    ub_appro: float
    ub_bias: float
    ub_bias_ratio: float
    dx_real: float
    dx_appro: float
    dx_bias: float
    dx_bias_ratio: float


def _ratio(bias, truth):
    return float(bias / truth) if truth > 0 else 0.0


def bias_report(x, w, bits=6, s=None, pct=DEFAULT_PCT):
    """Quantify the three approximations behind the closed-form factors.

    (1) dropping cross terms from the quadratic losses, (2) measuring the
    activation loss under FP instead of quantized weights, (3) estimating
    the post-scaling activation error as dx / s_anchor instead of
    requantizing the scaled tensor.
    """
    xr = _rows(x)
    w = np.asarray(w)
    if w.ndim != 2 or xr.shape[1] != w.shape[0]:
        raise ConfigError(f"shape mismatch: activations {xr.shape} vs weights {w.shape}")
    xq, _ = fake_quant_activations(xr, bits, pct)
    wq, _ = fake_quant_weights(w, bits)
    x64 = xr.astype(np.float64)
    w64 = w.astype(np.float64)
    dx = x64 - xq
    dw = w64 - wq

    ew_real = float(((x64 @ dw) ** 2).mean(axis=1).sum())
    ew_appro = float(((x64 * x64) @ (dw * dw)).mean(axis=1).sum())
    ex_real = float(((dx @ w64) ** 2).mean(axis=1).sum())
    ex_appro = float(((dx * dx) @ (w64 * w64)).mean(axis=1).sum())

    y = x64 @ w64
    e_total = float(((xq.astype(np.float64) @ wq - y) ** 2).mean(axis=1).sum())
    e_w = float(((x64 @ (wq - w64)) ** 2).mean(axis=1).sum())
    ub_real = max(e_total - e_w, 0.0)
    ub_appro = ex_real

    if s is None:
        s = np.ones(w.shape[0], dtype=np.float64)
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    anchor = int(np.argmax(channel_range(xr)))
    s_anchor = float(s[anchor])
    dx_appro = float((np.abs(dx) / s_anchor).sum(axis=0).mean())
    xs = x64 / s
    xs_q, _ = fake_quant_activations(xs, bits, pct)
    dx_real = float(np.abs(xs - xs_q).sum(axis=0).mean())

    return BiasReport(
        ew_real=ew_real,
        ew_appro=ew_appro,
        ew_bias=abs(ew_real - ew_appro),
        ew_bias_ratio=_ratio(abs(ew_real - ew_appro), ew_real),
        ex_real=ex_real,
        ex_appro=ex_appro,
        ex_bias=abs(ex_real - ex_appro),
        ex_bias_ratio=_ratio(abs(ex_real - ex_appro), ex_real),
        ub_real=ub_real,
        ub_appro=ub_appro,
        ub_bias=abs(ub_real - ub_appro),
        ub_bias_ratio=_ratio(abs(ub_real - ub_appro), ub_real),
        dx_real=dx_real,
        dx_appro=dx_appro,
        dx_bias=abs(dx_real - dx_appro),
        dx_bias_ratio=_ratio(abs(dx_real - dx_appro), dx_real),
    )


def range_after_scaling_check(w, s, tolerance=0.05):
    """Fraction of output channels whose scaled range tracks the prediction.

    Prediction per column: unscaled range times max(s[row of min], s[row of
    max]). Comparison is |R' - pred| <= tolerance * pred (with a 1e-12
    floor so zero-range columns, e.g. single-row weights, count as exact).
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ConfigError(f"weights must be rank 2, got rank {w.ndim}")
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if s.shape[0] != w.shape[0]:
        raise ConfigError(f"scaling length {s.shape[0]} != row count {w.shape[0]}")
    i_lo = np.argmin(w, axis=0)
    i_hi = np.argmax(w, axis=0)
    base_range = w.max(axis=0) - w.min(axis=0)
    pred = base_range * np.maximum(s[i_lo], s[i_hi])
    ws = s[:, None] * w
    new_range = ws.max(axis=0) - ws.min(axis=0)
    ok = np.abs(new_range - pred) <= tolerance * pred + 1e-12
    return float(ok.mean())

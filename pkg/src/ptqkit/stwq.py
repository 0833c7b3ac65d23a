"""Static token-wise quantization plans.

Activations with a fixed token length and position-invariant distributions
can be quantized with parameters fixed offline per token position; sink
positions (the conditioning token and anything with an outsized range) can
get their own parameters. Applying a plan reads no statistics from its
input, so there is no calibration work at inference time. The dynamic
min-max variant, which recalibrates per position from the tensor being
quantized, is kept as the comparison baseline.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .quantcore import (
    DEFAULT_PCT,
    GroupAxis,
    calibrate_percentile,
    fake_quant,
    params_from_records,
    params_to_records,
)

SINK_THRESHOLD = 4.0


class TokenMode(enum.Enum):
    PER_POSITION = "per-position"
    SINK_SPLIT = "sink-split"


@dataclass(frozen=True)
class TokenQuantPlan:
    """Frozen quantization parameters along a fixed-length token axis.

    PER_POSITION stores one QuantParams per position; SINK_SPLIT stores
    exactly two (sink positions first, normal positions second).
    """

    seq_len: int
    mode: TokenMode
    sink_set: tuple
    params: tuple

    def __post_init__(self):
        if self.seq_len < 1:
            raise ConfigError(f"seq_len must be positive, got {self.seq_len}")
        if any(not 0 <= t < self.seq_len for t in self.sink_set):
            raise ConfigError(f"sink indices {self.sink_set} outside [0, {self.seq_len})")
        expected = self.seq_len if self.mode is TokenMode.PER_POSITION else 2
        if len(self.params) != expected:
            raise ConfigError(
                f"{self.mode.value} plan needs {expected} parameter records, got {len(self.params)}"
            )


def _as_samples(x):
    """Accept [S, T, n], a single [T, n], or a sequence of [T, n] samples."""
    if isinstance(x, (list, tuple)):
        arrs = [np.asarray(a) for a in x]
        if not arrs:
            raise ConfigError("need at least one calibration sample")
        if any(a.ndim != 2 for a in arrs):
            raise ConfigError("each calibration sample must be rank 2 [tokens, channels]")
        shapes = {a.shape for a in arrs}
        if len(shapes) != 1:
            raise ConfigError(
                f"fixed token length required, got sample shapes {sorted(shapes)}"
            )
        return np.stack(arrs)
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None]
    if x.ndim != 3:
        raise ConfigError(f"activations must be [samples, tokens, channels], got rank {x.ndim}")
    return x


def position_ranges(x, pct=DEFAULT_PCT):
    """Percentile range per token position, averaged over samples."""
    x3 = _as_samples(x).astype(np.float64)
    lo, hi = np.percentile(x3, [pct[0], pct[1]], axis=2)
    return (hi - lo).mean(axis=0)


def detect_sink_tokens(x, threshold=SINK_THRESHOLD, pct=DEFAULT_PCT, force_initial=True):
    """Positions whose range exceeds threshold x median range.

    Position 0 is always included by default: the initial token carries the
    conditioning signal and behaves unlike the rest of the sequence.
    """
    x3 = _as_samples(x)
    seq_len = x3.shape[1]
    if seq_len == 1:
        return (0,)
    ranges = position_ranges(x3, pct)
    med = float(np.median(ranges))
    sinks = set(np.nonzero(ranges > threshold * med)[0].tolist())
    if force_initial:
        sinks.add(0)
    return tuple(sorted(sinks))


def build_token_plan(
    x_calib,
    bits,
    pct=DEFAULT_PCT,
    mode=TokenMode.PER_POSITION,
    sink_set=None,
    sink_threshold=SINK_THRESHOLD,
):
    """Calibrate a static plan from [S, T, n] activations.

    Min-max behaviour is pct=(0, 100). SINK_SPLIT pools sink positions into
    one group and the rest into the other; if every position is a sink the
    normal group reuses the sink parameters.
    """
    x3 = _as_samples(x_calib)
    seq_len = x3.shape[1]
    if mode is TokenMode.PER_POSITION:
        params = calibrate_percentile(x3, GroupAxis.PER_TOKEN, bits, pct[0], pct[1])
        return TokenQuantPlan(seq_len, mode, tuple(sink_set or ()), tuple(params))

    if mode is not TokenMode.SINK_SPLIT:
        raise ConfigError(f"unknown token mode {mode!r}")
    if sink_set is None:
        sink_set = detect_sink_tokens(x3, sink_threshold, pct)
    sink_set = tuple(sorted(set(int(t) for t in sink_set)))
    if any(not 0 <= t < seq_len for t in sink_set):
        raise ConfigError(f"sink indices {sink_set} outside [0, {seq_len})")
    normal = [t for t in range(seq_len) if t not in sink_set]
    (sink_p,) = calibrate_percentile(
        x3[:, list(sink_set), :], GroupAxis.PER_TENSOR, bits, pct[0], pct[1]
    )
    if normal:
        (normal_p,) = calibrate_percentile(
            x3[:, normal, :], GroupAxis.PER_TENSOR, bits, pct[0], pct[1]
        )
    else:
        normal_p = sink_p
    return TokenQuantPlan(seq_len, mode, sink_set, (sink_p, normal_p))


def apply_token_plan(x, plan):
    """Fake-quantize each token slice with its static parameters."""
    x = np.asarray(x)
    squeeze = x.ndim == 2
    x3 = _as_samples(x)
    if x3.shape[1] != plan.seq_len:
        raise ConfigError(
            f"token length {x3.shape[1]} does not match plan seq_len {plan.seq_len}"
        )
    out = np.empty(x3.shape, dtype=np.float32)
    if plan.mode is TokenMode.PER_POSITION:
        for t in range(plan.seq_len):
            out[:, t, :] = fake_quant(x3[:, t, :], plan.params[t], GroupAxis.PER_TENSOR)
    else:
        sink = list(plan.sink_set)
        normal = [t for t in range(plan.seq_len) if t not in plan.sink_set]
        if sink:
            out[:, sink, :] = fake_quant(x3[:, sink, :], plan.params[0], GroupAxis.PER_TENSOR)
        if normal:
            out[:, normal, :] = fake_quant(x3[:, normal, :], plan.params[1], GroupAxis.PER_TENSOR)
    return out[0] if squeeze else out


def dynamic_token_quant(x, bits):
    """Min-max per-position parameters computed from x itself at apply time."""
    x3 = _as_samples(x)
    plan = build_token_plan(x3, bits, pct=(0.0, 100.0), mode=TokenMode.PER_POSITION)
    out = apply_token_plan(x3, plan)
    return out[0] if np.asarray(x).ndim == 2 else out


def plan_to_json(plan, layer="linear"):
    """Serialize a plan to the sidecar-file record."""
    axis = GroupAxis.PER_TOKEN if plan.mode is TokenMode.PER_POSITION else GroupAxis.PER_TENSOR
    return {
        "layer": layer,
        "mode": plan.mode.value,
        "seq_len": plan.seq_len,
        "sink_set": list(plan.sink_set),
        "params": params_to_records(list(plan.params), axis),
    }


def plan_from_json(obj):
    """Inverse of plan_to_json; validates the token length."""
    try:
        mode = TokenMode(obj["mode"])
        seq_len = int(obj["seq_len"])
        sink_set = tuple(sorted(int(t) for t in obj["sink_set"]))
        params, _ = params_from_records(obj["params"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed token plan record: {exc}") from exc
    return TokenQuantPlan(seq_len, mode, sink_set, tuple(params))

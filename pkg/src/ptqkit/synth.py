"""Synthetic activations and a toy affine+linear block.

The generator reproduces, on demand and deterministically, the activation
pathologies the toolkit targets: channel-wise outliers, a token-position
scale ramp, an oversized initial (sink) position, near-duplicate samples,
and per-sample spikes at varying token positions. The toy block models the
affine-then-linear sub-path where scaling factors can be fused offline.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .gps import equivalent_scale
from .quantcore import DEFAULT_PCT, fake_quant_activations, fake_quant_weights
from .tensorio import matmul

PRESETS = ("outliers", "tokens", "sinks", "duplicates", "stress", "all")


@dataclass(frozen=True)
class SynthConfig:
    samples: int = 64
    tokens: int = 16
    channels: int = 64
    out_channels: int = 64
    outlier_channels: tuple = ()
    outlier_magnitude: tuple = ()  # one multiplier per outlier channel
    anchor_weight_gain: float = 1.0  # applied to the first outlier channel's weight row
    token_ramp: tuple = ()  # per-position scale profile, empty = flat
    sink_magnitude: float = 1.0
    duplicate_fraction: float = 0.0
    spike_magnitude: float = 0.0  # per-sample spike at a random position
    spike_channels: int = 1
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.samples, self.tokens, self.channels, self.out_channels) < 1:
            raise ConfigError("all tensor dimensions must be >= 1")
        if isinstance(self.outlier_magnitude, (int, float)):
            object.__setattr__(
                self, "outlier_magnitude",
                tuple(float(self.outlier_magnitude) for _ in self.outlier_channels),
            )
        if len(self.outlier_magnitude) != len(self.outlier_channels):
            raise ConfigError("need one outlier magnitude per outlier channel")
        if any(m <= 0 for m in self.outlier_magnitude):
            raise ConfigError("outlier magnitudes must be positive")
        if self.sink_magnitude <= 0 or self.noise_sigma <= 0 or self.anchor_weight_gain <= 0:
            raise ConfigError("multipliers and noise_sigma must be positive")
        if not 0.0 <= self.duplicate_fraction < 1.0:
            raise ConfigError(f"duplicate_fraction must be in [0, 1), got {self.duplicate_fraction}")
        if self.token_ramp and len(self.token_ramp) != self.tokens:
            raise ConfigError(
                f"token_ramp length {len(self.token_ramp)} != tokens {self.tokens}"
            )
        if self.token_ramp and min(self.token_ramp) <= 0:
            raise ConfigError("token_ramp entries must be positive")
        if any(not 0 <= c < self.channels for c in self.outlier_channels):
            raise ConfigError(f"outlier_channels {self.outlier_channels} out of range")
        if self.spike_magnitude < 0 or not 1 <= self.spike_channels <= self.channels:
            raise ConfigError("invalid spike configuration")


def linear_ramp(tokens, start=1.0, stop=3.0):
    """Per-position scale profile rising linearly from start to stop."""
    return tuple(np.linspace(start, stop, tokens).tolist())


def preset_config(name, seed=0):
    """Named configurations exercising one pathology each ('all' combines).

    The outliers preset has one dominant channel (both in activations and in
    its weight row) plus two secondary wide channels: the regime where
    per-tensor ranges and per-out-channel weight ranges are anchored by a
    single channel, which is what channel-wise scaling targets.
    """
    base = SynthConfig(seed=seed)
    if name == "outliers":
        return replace(
            base,
            samples=32,
            tokens=32,
            outlier_channels=(3, 17, 41),
            outlier_magnitude=(10.0, 4.0, 4.0),
            anchor_weight_gain=5.0,
        )
    if name == "tokens":
        return replace(base, samples=16, tokens=32, token_ramp=linear_ramp(32))
    if name == "sinks":
        return replace(base, samples=16, tokens=32, sink_magnitude=10.0)
    if name == "duplicates":
        return replace(base, samples=100, tokens=8, duplicate_fraction=0.5)
    if name == "stress":
        return replace(base, samples=64, tokens=16, spike_magnitude=6.0, spike_channels=1)
    if name == "all":
        return replace(
            base,
            samples=32,
            tokens=32,
            outlier_channels=(3, 17, 41),
            outlier_magnitude=(10.0, 4.0, 4.0),
            anchor_weight_gain=5.0,
            token_ramp=linear_ramp(32),
            sink_magnitude=10.0,
            duplicate_fraction=0.25,
        )
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


def _rngs(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(2)]


def gen_activations(cfg):
    """Draw [samples, tokens, channels] float32 activations for cfg.

    Draw order is fixed (base noise, spikes, duplicate jitter) so equal
    configs give bit-identical tensors.
    """
    rng, _ = _rngs(cfg.seed)
    x = rng.normal(0.0, cfg.noise_sigma, size=(cfg.samples, cfg.tokens, cfg.channels))
    for ch, mag in zip(cfg.outlier_channels, cfg.outlier_magnitude):
        x[:, :, ch] *= mag
    if cfg.token_ramp:
        x *= np.asarray(cfg.token_ramp)[None, :, None]
    if cfg.sink_magnitude != 1.0:
        x[:, 0, :] *= cfg.sink_magnitude
    if cfg.spike_magnitude > 0:
        positions = rng.integers(0, cfg.tokens, size=cfg.samples)
        signs = rng.choice([-1.0, 1.0], size=(cfg.samples, cfg.spike_channels))
        for i in range(cfg.samples):
            chans = rng.choice(cfg.channels, size=cfg.spike_channels, replace=False)
            x[i, positions[i], chans] += signs[i] * cfg.spike_magnitude * cfg.noise_sigma
    dup = math.ceil(cfg.duplicate_fraction * cfg.samples)
    if dup:
        jitter = rng.normal(0.0, 0.01 * cfg.noise_sigma, size=(dup, cfg.tokens, cfg.channels))
        x[cfg.samples - dup :] = x[0] + jitter
    return x.astype(np.float32)


@dataclass(frozen=True)
class ToyBlock:
    """Pre-linear per-channel affine (gain, bias) followed by one linear."""

    norm_gain: np.ndarray
    norm_bias: np.ndarray
    weight: np.ndarray
    label: str = "linear0"


def make_toy_block(cfg):
    """Block parameters drawn from a stream independent of gen_activations."""
    _, rng = _rngs(cfg.seed)
    n, m = cfg.channels, cfg.out_channels
    gain = (1.0 + 0.2 * rng.normal(size=n)).astype(np.float32)
    bias = (0.5 * rng.normal(size=n)).astype(np.float32)
    weight = rng.normal(0.0, 1.0, size=(n, m))
    if cfg.outlier_channels and cfg.anchor_weight_gain != 1.0:
        weight[cfg.outlier_channels[0]] *= cfg.anchor_weight_gain
    return ToyBlock(norm_gain=gain, norm_bias=bias, weight=weight.astype(np.float32), label="linear0")


def toy_forward(block, x, s=None, bits_a=None, bits_w=None, pct=DEFAULT_PCT):
    """Affine, optional runtime scaling, optional fake quantization, linear.

    With s fused into the block via gps.fuse_scaling, calling this with
    s=None reproduces the runtime-scaled output up to float rounding.
    """
    x = np.asarray(x)
    if x.ndim not in (2, 3):
        raise ConfigError(f"activations must be rank 2 or 3, got rank {x.ndim}")
    if x.shape[-1] != block.weight.shape[0]:
        raise ConfigError(
            f"channel mismatch: activations {x.shape} vs weights {block.weight.shape}"
        )
    a = x.astype(np.float64) * block.norm_gain + block.norm_bias
    w = block.weight
    if s is not None:
        a, w = equivalent_scale(a, w, s)
    if bits_a is not None:
        a, _ = fake_quant_activations(a, bits_a, pct)
    if bits_w is not None:
        w, _ = fake_quant_weights(w, bits_w)
    rows = a.reshape(-1, a.shape[-1])
    y = matmul(rows, w)
    return y.reshape(x.shape[:-1] + (block.weight.shape[1],))

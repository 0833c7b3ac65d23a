"""Synthetic generator and toy block tests."""

import numpy as np
import pytest
from dataclasses import replace

from ptqkit import gps, synth
from ptqkit.errors import ConfigError
from ptqkit.tensorio import matmul


def test_same_seed_bitwise_identical():
    for preset in synth.PRESETS:
        cfg = synth.preset_config(preset, 7)
        a = synth.gen_activations(cfg)
        b = synth.gen_activations(cfg)
        assert np.array_equal(a.view(np.uint32), b.view(np.uint32))


def test_different_seed_differs():
    a = synth.gen_activations(synth.preset_config("outliers", 0))
    b = synth.gen_activations(synth.preset_config("outliers", 1))
    assert not np.array_equal(a, b)


def test_outlier_channel_dominates():
    cfg = synth.preset_config("outliers", 3)
    x = synth.gen_activations(cfg)
    ranges = gps.channel_range(x)
    anchor = cfg.outlier_channels[0]
    others = np.delete(ranges, list(cfg.outlier_channels))
    assert np.argmax(ranges) == anchor
    assert ranges[anchor] >= 5 * np.median(others)


def test_token_ramp_profile():
    cfg = synth.preset_config("tokens", 0)
    x = synth.gen_activations(cfg)
    spread = np.abs(x.astype(np.float64)).mean(axis=(0, 2))
    assert spread[-1] > 2 * spread[0]


def test_sink_position_dominates():
    cfg = synth.preset_config("sinks", 0)
    x = synth.gen_activations(cfg)
    spread = np.abs(x.astype(np.float64)).mean(axis=(0, 2))
    assert spread[0] > 5 * np.median(spread[1:])


def test_duplicates_cluster():
    cfg = synth.preset_config("duplicates", 0)
    x = synth.gen_activations(cfg)
    dups = x[50:]
    deviation = np.abs(dups - x[0][None]).max()
    assert deviation <= 0.1  # jitter is 0.01 * sigma
    diverse_spread = np.abs(x[1:50] - x[0][None]).max()
    assert diverse_spread > 1.0


def test_stress_spikes_at_varying_positions():
    cfg = synth.preset_config("stress", 0)
    x = synth.gen_activations(cfg)
    peak_pos = np.abs(x).max(axis=2).argmax(axis=1)
    assert len(set(peak_pos.tolist())) > 3
    assert np.abs(x).max() >= 0.8 * cfg.spike_magnitude


def test_config_validation():
    with pytest.raises(ConfigError):
        synth.SynthConfig(samples=0)
    with pytest.raises(ConfigError):
        synth.SynthConfig(duplicate_fraction=1.0)
    with pytest.raises(ConfigError):
        synth.SynthConfig(outlier_channels=(99,), outlier_magnitude=(2.0,))
    with pytest.raises(ConfigError):
        synth.SynthConfig(token_ramp=(1.0, 2.0), tokens=3)
    with pytest.raises(ConfigError):
        synth.preset_config("bogus")


def test_scalar_outlier_magnitude_broadcasts():
    cfg = synth.SynthConfig(outlier_channels=(1, 2), outlier_magnitude=5.0)
    assert cfg.outlier_magnitude == (5.0, 5.0)


def test_toy_forward_plain_matmul():
    cfg = synth.SynthConfig(samples=2, tokens=3, channels=4, out_channels=5, seed=1)
    block = synth.make_toy_block(cfg)
    block = replace(block, norm_gain=np.ones(4, np.float32), norm_bias=np.zeros(4, np.float32))
    x = synth.gen_activations(cfg)
    y = synth.toy_forward(block, x)
    expect = matmul(x.reshape(-1, 4), block.weight).reshape(2, 3, 5)
    assert np.allclose(y, expect, atol=1e-6)


def test_fused_equals_runtime_scaling():
    cfg = synth.preset_config("outliers", 2)
    block = synth.make_toy_block(cfg)
    x = synth.gen_activations(cfg)
    affine = (x.astype(np.float64) * block.norm_gain + block.norm_bias).astype(np.float32)
    s = gps.gps_solve(affine, block.weight, 6, 6)
    runtime = synth.toy_forward(block, x, s=s)
    gain_f, bias_f = gps.fuse_scaling(block.norm_gain, block.norm_bias, s)
    fused_block = replace(
        block,
        norm_gain=gain_f,
        norm_bias=bias_f,
        weight=(block.weight.astype(np.float64) * s[:, None]).astype(np.float32),
    )
    fused = synth.toy_forward(fused_block, x)
    scale = np.abs(runtime).max()
    assert np.abs(fused - runtime).max() <= 1e-5 * max(scale, 1.0)


def test_toy_forward_quantized_improves_with_scaling():
    wins = 0
    for seed in range(20):
        cfg = synth.preset_config("outliers", seed)
        block = synth.make_toy_block(cfg)
        x = synth.gen_activations(cfg)
        y_ref = synth.toy_forward(block, x)
        affine = (x.astype(np.float64) * block.norm_gain + block.norm_bias).astype(np.float32)
        s = gps.gps_solve(affine, block.weight, 6, 6, pct=(0.0, 100.0))
        y_none = synth.toy_forward(block, x, bits_a=6, bits_w=6, pct=(0.0, 100.0))
        y_gps = synth.toy_forward(block, x, s=s, bits_a=6, bits_w=6, pct=(0.0, 100.0))
        e_none = ((y_ref - y_none) ** 2).mean()
        e_gps = ((y_ref - y_gps) ** 2).mean()
        wins += e_gps < e_none
    assert wins >= 15


def test_toy_forward_shape_mismatch():
    cfg = synth.SynthConfig(channels=4)
    block = synth.make_toy_block(cfg)
    with pytest.raises(ConfigError):
        synth.toy_forward(block, np.zeros((2, 3), dtype=np.float32))

"""Loss decomposition, oracles, perturbation study, and bias report tests."""

import numpy as np
import pytest

from ptqkit import analysis, gps, synth
from ptqkit.errors import ConfigError
from ptqkit.quantcore import params_from_range


def lattice_tensor(rng, shape, bits, span, per_column=False):
    """Values exactly on the representable lattice of [-span, span].

    per_column pins the lattice extremes in every column so per-out-channel
    recalibration reproduces the same lattice.
    """
    p = params_from_range(-span, span, bits)
    q = rng.integers(0, p.qmax + 1, size=shape)
    if per_column:
        q[0, :] = 0
        q[-1, :] = p.qmax
    else:
        q.flat[0] = 0
        q.flat[-1] = p.qmax
    return ((q - p.zero_point) * np.float64(p.delta)).astype(np.float32)


def test_loss_decompose_lattice_all_zero():
    rng = np.random.default_rng(0)
    x = lattice_tensor(rng, (10, 16), 8, 2.0)
    w = lattice_tensor(rng, (16, 4), 8, 1.0, per_column=True)
    lb = analysis.loss_decompose(x, w, 8, 8, pct=(0.0, 100.0))
    assert lb.e_x == 0.0
    assert lb.e_w == 0.0
    assert lb.e_total == 0.0
    assert lb.e_x_hat == 0.0


def test_loss_decompose_bound_holds():
    rng = np.random.default_rng(1)
    for i in range(30):
        bits = (4, 6, 8)[i % 3]
        x = rng.normal(0, 1, size=(8, 8, 16)).astype(np.float32)
        w = rng.normal(0, 1, size=(16, 8)).astype(np.float32)
        lb = analysis.loss_decompose(x, w, bits, bits)
        assert lb.e_total <= lb.e_x_hat + lb.e_w + 1e-6
        for field in ("e_x", "e_x_hat", "e_w", "e_total", "cross_term_w", "cross_term_x"):
            assert getattr(lb, field) >= 0.0


def test_loss_decompose_upper_bound_close_at_6_bits():
    rng = np.random.default_rng(2)
    x = rng.normal(0, 1, size=(16, 32, 64)).astype(np.float32)
    w = rng.normal(0, 1, size=(64, 64)).astype(np.float32)
    lb = analysis.loss_decompose(x, w, 6, 6)
    assert abs(lb.e_x_hat - lb.e_x) / lb.e_x < 0.05


def test_remark1_constant_factors():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 1, size=(20, 8)).astype(np.float32)
    x *= np.arange(1, 9, dtype=np.float32)  # distinct channel ranges
    rep = analysis.remark1_check(x, np.full(8, 2.0))
    assert rep.frac_s_monotone == 0.0
    assert rep.frac_range_preserved == 1.0
    assert rep.pair_count == 8 * 7 // 2


def test_remark1_monotone_construction():
    rng = np.random.default_rng(4)
    x = rng.normal(0, 1, size=(50, 6)).astype(np.float32)
    x *= np.float32([1, 2, 4, 8, 16, 32])
    ranges = gps.channel_range(x)
    s = np.sqrt(ranges)  # strictly increasing with range, sublinear
    rep = analysis.remark1_check(x, s)
    assert rep.frac_s_monotone == 1.0
    assert rep.frac_range_preserved == 1.0


def test_remark1_matches_double_loop_oracle():
    rng = np.random.default_rng(5)
    x = rng.normal(0, 1, size=(30, 12)).astype(np.float32)
    x *= rng.uniform(0.5, 8, size=12).astype(np.float32)
    s = rng.uniform(0.5, 4, size=12)
    rep = analysis.remark1_check(x, s)
    r = gps.channel_range(x)
    pairs = s_ok = r_ok = 0
    for i in range(12):
        for j in range(12):
            if r[i] > r[j]:
                pairs += 1
                s_ok += s[i] > s[j]
                r_ok += r[i] / s[i] > r[j] / s[j]
    assert rep.pair_count == pairs
    assert rep.frac_s_monotone == pytest.approx(s_ok / pairs)
    assert rep.frac_range_preserved == pytest.approx(r_ok / pairs)


def test_grid_search_symmetric_case():
    s2, g = analysis.oracle_grid_search(1.7, 4.0, 4.0, 2000)
    assert s2 == pytest.approx(1.7, rel=0.01)
    assert abs(g) <= 1e-3  # grid resolution, not float error


def test_grid_search_analytic_example():
    s2, g = analysis.oracle_grid_search(1.0, 4.0, 1.0, 2000)
    assert s2 == pytest.approx((1.0 / 4.0) ** 0.25, rel=0.01)
    assert g == pytest.approx(0.5, rel=0.01)


def test_grid_search_matches_closed_form_100_instances():
    rng = np.random.default_rng(6)
    for _ in range(100):
        a, b = 10 ** rng.uniform(-4, 4, size=2)
        s1 = 10 ** rng.uniform(-1, 2)
        s2_grid, g_grid = analysis.oracle_grid_search(s1, a, b, 2000)
        s2_closed = gps.gain_optimal_factor(s1, a, b)
        assert abs(s2_grid - s2_closed) / s2_closed <= 0.01
        # the closed form dominates every grid point
        g_closed = gps.scaling_gain(s2_closed, s1, a, b)
        assert g_closed >= g_grid - 1e-12 * max(abs(g_closed), 1.0)


def test_grid_search_validation():
    with pytest.raises(ConfigError):
        analysis.oracle_grid_search(1.0, -1.0, 1.0)
    with pytest.raises(ConfigError):
        analysis.oracle_grid_search(1.0, 1.0, 1.0, grid_points=50)


def test_quantized_output_mse_zero_on_lattice():
    rng = np.random.default_rng(7)
    x = lattice_tensor(rng, (6, 16), 16, 4.0)
    w = lattice_tensor(rng, (16, 8), 16, 1.0, per_column=True)
    err = analysis.quantized_output_mse(
        x, w, None, 16, 16, pct=(0.0, 100.0), w_method="minmax"
    )
    assert err == 0.0


def test_quantized_output_mse_token_modes():
    rng = np.random.default_rng(8)
    x = rng.normal(0, 1, size=(4, 6, 16)).astype(np.float32)
    w = rng.normal(0, 1, size=(16, 8)).astype(np.float32)
    errs = {
        mode: analysis.quantized_output_mse(x, w, None, 6, 6, token_mode=mode)
        for mode in ("tensor", "per-position", "sink-split", "dynamic")
    }
    assert all(np.isfinite(v) and v >= 0 for v in errs.values())
    with pytest.raises(ConfigError):
        analysis.quantized_output_mse(x, w, None, 6, 6, token_mode="bogus")


def test_perturbation_amplitude_to_zero_reproduces_baseline():
    cfg = synth.preset_config("outliers", 0)
    x = synth.gen_activations(cfg)
    w = synth.make_toy_block(cfg).weight
    s = gps.gps_solve(x, w, 6, 6)
    res = analysis.perturbation_study(x, w, s, trials=5, amplitude=1e-13, seed=3)
    for e in res.errors:
        assert e == pytest.approx(res.baseline, abs=1e-9)


def test_perturbation_deterministic_under_seed():
    cfg = synth.preset_config("outliers", 1)
    x = synth.gen_activations(cfg)
    w = synth.make_toy_block(cfg).weight
    s = gps.gps_solve(x, w, 6, 6)
    a = analysis.perturbation_study(x, w, s, trials=8, amplitude=0.3, seed=11)
    b = analysis.perturbation_study(x, w, s, trials=8, amplitude=0.3, seed=11)
    assert a == b


def test_perturbation_validation():
    x = np.zeros((2, 2), dtype=np.float32)
    w = np.zeros((2, 2), dtype=np.float32)
    with pytest.raises(ConfigError):
        analysis.perturbation_study(x, w, np.ones(2), trials=0, amplitude=0.3, seed=0)
    with pytest.raises(ConfigError):
        analysis.perturbation_study(x, w, np.ones(2), trials=1, amplitude=1.5, seed=0)


def test_bias_report_near_exact_at_16_bits():
    rng = np.random.default_rng(9)
    x = rng.normal(0, 1, size=(8, 16, 32)).astype(np.float32)
    w = rng.normal(0, 1, size=(32, 16)).astype(np.float32)
    scale = ((x.reshape(-1, 32).astype(np.float64) @ w.astype(np.float64)) ** 2).mean()
    # percentile default still clips the extreme tail; the biases vanish
    br = analysis.bias_report(x, w, 16)
    assert br.ew_bias <= 1e-6 * scale
    assert br.ub_bias <= 1e-4 * br.ub_real + 1e-12
    assert br.dx_bias <= 1e-6
    # min-max calibration removes clipping: the losses themselves vanish
    br_mm = analysis.bias_report(x, w, 16, pct=(0.0, 100.0))
    assert br_mm.ew_real <= 1e-6 * scale
    assert br_mm.ex_real <= 1e-6 * scale
    assert br_mm.ub_bias <= 1e-6 * scale
    assert br_mm.dx_real <= 1e-2


def test_bias_report_gaussian_ratios():
    rng = np.random.default_rng(10)
    x = rng.normal(0, 1, size=(16, 32, 64)).astype(np.float32)
    w = rng.normal(0, 1, size=(64, 96)).astype(np.float32)
    s = gps.gps_solve(x, w, 6, 6)
    br = analysis.bias_report(x, w, 6, s)
    assert br.ew_bias_ratio < 0.25
    assert br.ex_bias_ratio < 0.25
    assert br.dx_bias_ratio < 0.5
    assert np.isfinite(br.dx_bias_ratio)


def test_range_check_identity_scaling():
    rng = np.random.default_rng(11)
    w = rng.normal(0, 1, size=(8, 6)).astype(np.float32)
    assert analysis.range_after_scaling_check(w, np.ones(8)) == 1.0


def test_range_check_single_row():
    w = np.float32([[1.0, -2.0, 0.5]])
    assert analysis.range_after_scaling_check(w, np.array([3.0])) == 1.0


def test_range_check_matches_brute_force():
    rng = np.random.default_rng(12)
    w = rng.normal(0, 1, size=(10, 20)).astype(np.float32)
    s = rng.uniform(0.5, 5, size=10)
    frac = analysis.range_after_scaling_check(w, s)
    ok = 0
    w64 = w.astype(np.float64)
    for k in range(20):
        col = w64[:, k]
        i_lo = int(np.argmin(col))
        i_hi = int(np.argmax(col))
        pred = (col[i_hi] - col[i_lo]) * max(s[i_lo], s[i_hi])
        scaled = s * col
        new_range = scaled.max() - scaled.min()
        ok += abs(new_range - pred) <= 0.05 * pred + 1e-12
    assert frac == pytest.approx(ok / 20)

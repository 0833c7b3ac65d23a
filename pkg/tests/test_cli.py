"""Command-line behavior: summaries, artifacts, errors, determinism."""

import csv
import json

import numpy as np
import pytest

from ptqkit import tensorio
from ptqkit.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()
    assert out, "expected a JSON summary line on stdout"
    return code, json.loads(out[-1])


def gen_pair(tmp_path, capsys, preset="outliers", seed=42):
    x_path = tmp_path / "x.ptqt"
    w_path = tmp_path / "w.ptqt"
    code, summary = run_cli(
        capsys, "gen", "--preset", preset, "--seed", str(seed),
        "--out", str(x_path), "--weights-out", str(w_path),
    )
    assert code == 0
    return x_path, w_path


def test_gen_writes_tensor_and_echoes_config(tmp_path, capsys):
    x_path, w_path = gen_pair(tmp_path, capsys)
    assert x_path.exists() and w_path.exists()
    x = tensorio.load_tensor(x_path)
    assert x.ndim == 3
    _, summary = run_cli(
        capsys, "gen", "--preset", "sinks", "--seed", "3", "--out", str(x_path)
    )
    assert summary["config"]["preset"] == "sinks"
    assert summary["config"]["seed"] == 3
    assert summary["command"] == "gen"


def test_calib_writes_records(tmp_path, capsys):
    x_path, _ = gen_pair(tmp_path, capsys, preset="tokens")
    out = tmp_path / "params.json"
    code, summary = run_cli(
        capsys, "calib", "--input", str(x_path), "--axis", "token",
        "--bits", "6", "--method", "percentile", "--out", str(out),
    )
    assert code == 0
    records = json.loads(out.read_text())
    assert summary["groups"] == len(records) == 32
    assert all(r["axis"] == "token" for r in records)


def test_gps_writes_rank1_tensor(tmp_path, capsys):
    x_path, w_path = gen_pair(tmp_path, capsys)
    out = tmp_path / "s.ptqt"
    code, summary = run_cli(
        capsys, "gps", "--activations", str(x_path), "--weights", str(w_path),
        "--out", str(out),
    )
    assert code == 0
    s = tensorio.load_tensor(out)
    assert s.ndim == 1
    assert (s > 0).all()
    assert summary["anchor_index"] == 3


def test_quant_sim_gps_beats_none(tmp_path, capsys):
    x_path, w_path = gen_pair(tmp_path, capsys, seed=42)
    report = tmp_path / "report.json"
    code, summary = run_cli(
        capsys, "quant-sim", "--activations", str(x_path), "--weights", str(w_path),
        "--scaling", "gps", "--bits-a", "6", "--bits-w", "6",
        "--pct-lo", "0", "--pct-hi", "100", "--w-method", "minmax",
        "--out", str(report),
    )
    assert code == 0
    assert summary["mse_gps"] < summary["mse_none"]
    on_disk = json.loads(report.read_text())
    assert on_disk["mse_gps"] == summary["mse_gps"]


def test_quant_sim_lattice_16_bit_zero(tmp_path, capsys):
    from ptqkit.quantcore import params_from_range

    rng = np.random.default_rng(0)
    p = params_from_range(-1.0, 1.0, 16)
    qx = rng.integers(0, p.qmax + 1, size=(12, 8))
    qx.flat[0] = 0
    qx.flat[-1] = p.qmax
    x = ((qx - p.zero_point) * np.float64(p.delta)).astype(np.float32)
    qw = rng.integers(0, p.qmax + 1, size=(8, 4))
    qw[0, :] = 0
    qw[-1, :] = p.qmax
    w = ((qw - p.zero_point) * np.float64(p.delta)).astype(np.float32)
    x_path, w_path = tmp_path / "x.ptqt", tmp_path / "w.ptqt"
    tensorio.save_tensor(x, x_path)
    tensorio.save_tensor(w, w_path)
    code, summary = run_cli(
        capsys, "quant-sim", "--activations", str(x_path), "--weights", str(w_path),
        "--bits-a", "16", "--bits-w", "16", "--pct-lo", "0", "--pct-hi", "100",
        "--w-method", "minmax",
    )
    assert code == 0
    assert summary["mse_none"] == 0.0


def test_stwq_plan_file(tmp_path, capsys):
    x_path, _ = gen_pair(tmp_path, capsys, preset="sinks")
    out = tmp_path / "plan.json"
    code, summary = run_cli(
        capsys, "stwq", "--input", str(x_path), "--bits", "6",
        "--token-mode", "sink-split", "--layer", "mhsa.qkv", "--out", str(out),
    )
    assert code == 0
    plan = json.loads(out.read_text())
    assert plan["layer"] == "mhsa.qkv"
    assert plan["mode"] == "sink-split"
    assert plan["seq_len"] == 32
    assert 0 in plan["sink_set"]
    assert len(plan["params"]) == 2


def test_dgc_select_index_list(tmp_path, capsys):
    x_path, _ = gen_pair(tmp_path, capsys, preset="duplicates", seed=0)
    out = tmp_path / "idx.json"
    code, summary = run_cli(
        capsys, "dgc-select", "--features", str(x_path),
        "--fraction", "0.5", "--out", str(out),
    )
    assert code == 0
    indices = json.loads(out.read_text())
    assert isinstance(indices, list)
    assert len(indices) == 50
    assert indices == sorted(indices)
    assert summary["selected"] == 50


def test_analyze_outputs_csv_and_json(tmp_path, capsys):
    x_path, w_path = gen_pair(tmp_path, capsys)
    prefix = tmp_path / "report"
    code, summary = run_cli(
        capsys, "analyze", "--activations", str(x_path), "--weights", str(w_path),
        "--out-prefix", str(prefix),
    )
    assert code == 0
    with open(f"{prefix}.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    for col in ("ew_real", "ew_appro", "ex_real", "ex_appro", "ub_real", "ub_appro",
                "dx_real", "dx_appro", "e_total", "range_tracking_fraction"):
        assert col in rows[0]
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["range_check_rule"]
    assert payload["loss"]["e_total"] >= 0


def test_perturb_csv(tmp_path, capsys):
    x_path, w_path = gen_pair(tmp_path, capsys)
    out = tmp_path / "trials.csv"
    code, summary = run_cli(
        capsys, "perturb", "--activations", str(x_path), "--weights", str(w_path),
        "--trials", "5", "--amplitude", "0.3", "--seed", "1", "--out", str(out),
    )
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["trial", "mse"]
    assert rows[1][0] == "baseline"
    assert len(rows) == 2 + 5
    assert summary["trials"] == 5


def test_unknown_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--bogus-flag", "1"])
    assert exc.value.code == 1
    err = capsys.readouterr().err
    assert "usage" in err


def test_missing_file_is_io_error(tmp_path, capsys):
    code, payload = run_cli(
        capsys, "calib", "--input", str(tmp_path / "absent.ptqt"),
        "--out", str(tmp_path / "p.json"),
    )
    assert code == 1
    assert payload["error"]["category"] == "io"
    assert not (tmp_path / "p.json").exists()


def test_bad_config_is_config_error(tmp_path, capsys):
    x_path, _ = gen_pair(tmp_path, capsys)
    code, payload = run_cli(
        capsys, "calib", "--input", str(x_path), "--method", "percentile",
        "--pct-lo", "90", "--pct-hi", "10", "--out", str(tmp_path / "p.json"),
    )
    assert code == 1
    assert payload["error"]["category"] == "config"


def test_corrupt_tensor_is_io_error(tmp_path, capsys):
    bad = tmp_path / "bad.ptqt"
    bad.write_bytes(b"XXXX" + bytes(40))
    code, payload = run_cli(
        capsys, "calib", "--input", str(bad), "--out", str(tmp_path / "p.json")
    )
    assert code == 1
    assert payload["error"]["category"] == "io"


def test_gen_determinism_byte_identical(tmp_path, capsys):
    a = tmp_path / "a.ptqt"
    b = tmp_path / "b.ptqt"
    for path in (a, b):
        code, _ = run_cli(capsys, "gen", "--preset", "all", "--seed", "9", "--out", str(path))
        assert code == 0
    assert a.read_bytes() == b.read_bytes()


def test_threads_flag_does_not_change_results(tmp_path, capsys):
    x_path, w_path = gen_pair(tmp_path, capsys)
    outs = []
    for threads in ("1", "8"):
        report = tmp_path / f"r{threads}.json"
        code, _ = run_cli(
            capsys, "--threads", threads, "quant-sim",
            "--activations", str(x_path), "--weights", str(w_path),
            "--scaling", "gps", "--out", str(report),
        )
        assert code == 0
        outs.append(report.read_bytes())
    assert outs[0] == outs[1]

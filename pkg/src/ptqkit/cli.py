"""Command-line front end.

Every command prints a one-line machine-readable JSON summary (including
the fully resolved config) to stdout and logs human-readable progress to
stderr (level from PTQKIT_LOG). Artifacts are written atomically via a
temp file + rename, so a failed run never leaves partial outputs. Exit
status is 0 on success, 1 with a categorized error (config|io|numeric)
otherwise.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import analysis, dgc, gps, stwq, synth
from .errors import ConfigError, PtqkitError
from .quantcore import (
    GroupAxis,
    calibrate_minmax,
    calibrate_mse,
    calibrate_percentile,
    params_to_records,
)
from .tensorio import load_tensor, save_tensor

log = logging.getLogger("ptqkit")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging():
    level = os.environ.get("PTQKIT_LOG", "info").lower()
    if level not in _LOG_LEVELS:
        level = "info"
    logging.basicConfig(
        stream=sys.stderr, level=_LOG_LEVELS[level], format="%(levelname)s %(message)s"
    )


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) with usage text on bad flags."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _atomic_write(path, write_fn):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _write_json(path, obj):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    _atomic_write(path, lambda p: p.write_text(text))


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write(path, lambda p: p.write_text(buf.getvalue()))


def _save_tensor_atomic(path, arr):
    _atomic_write(path, lambda p: save_tensor(arr, p))


def _config_echo(args):
    skip = {"func"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}


_AXES = {"tensor": GroupAxis.PER_TENSOR, "out-channel": GroupAxis.PER_OUT_CHANNEL, "token": GroupAxis.PER_TOKEN}


# -- commands ------------------------------------------------------------------

def _cmd_gen(args):
    cfg = synth.preset_config(args.preset, args.seed)
    overrides = {}
    for name in ("samples", "tokens", "channels", "out_channels"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        if "tokens" in overrides and cfg.token_ramp:
            overrides["token_ramp"] = synth.linear_ramp(overrides["tokens"])
        cfg = replace(cfg, **overrides)
    x = synth.gen_activations(cfg)
    _save_tensor_atomic(args.out, x)
    log.info("wrote activations %s to %s", x.shape, args.out)
    outputs = {"activations": str(args.out)}
    if args.weights_out:
        block = synth.make_toy_block(cfg)
        _save_tensor_atomic(args.weights_out, block.weight)
        outputs["weights"] = str(args.weights_out)
    return {"shape": list(x.shape), "outputs": outputs}


def _cmd_calib(args):
    t = load_tensor(args.input)
    axis = _AXES[args.axis]
    if args.method == "minmax":
        params = calibrate_minmax(t, axis, args.bits)
    elif args.method == "percentile":
        params = calibrate_percentile(t, axis, args.bits, args.pct_lo, args.pct_hi)
    else:
        params = calibrate_mse(t, axis, args.bits)
    records = params_to_records(params, axis)
    _write_json(args.out, records)
    deltas = [p.delta for p in params]
    return {
        "groups": len(params),
        "delta_min": min(deltas),
        "delta_max": max(deltas),
        "outputs": {"params": str(args.out)},
    }


def _solve_scaling(mode, x, w, args):
    if mode == "gps":
        return gps.gps_solve(
            x, w, args.bits_a, args.bits_w, (args.pct_lo, args.pct_hi),
            clip_factors=not getattr(args, "strict", False),
        )
    if mode == "smoothquant":
        return gps.smoothquant_baseline(x, w, args.alpha)
    return None


def _cmd_gps(args):
    x = load_tensor(args.activations)
    w = load_tensor(args.weights)
    s = _solve_scaling(args.method, x, w, args)
    _save_tensor_atomic(args.out, s.astype(np.float32))
    ranges = gps.channel_range(x)
    return {
        "method": args.method,
        "anchor_index": int(np.argmax(ranges)),
        "factor_min": float(s.min()),
        "factor_max": float(s.max()),
        "outputs": {"scaling": str(args.out)},
    }


def _cmd_quant_sim(args):
    x = load_tensor(args.activations)
    w = load_tensor(args.weights)
    pct = (args.pct_lo, args.pct_hi)
    report = {
        "mse_none": analysis.quantized_output_mse(
            x, w, None, args.bits_a, args.bits_w, pct,
            token_mode=args.token_mode, sink_threshold=args.sink_threshold,
            w_method=args.w_method,
        )
    }
    if args.scaling != "none":
        s = _solve_scaling(args.scaling, x, w, args)
        report[f"mse_{args.scaling}"] = analysis.quantized_output_mse(
            x, w, s, args.bits_a, args.bits_w, pct,
            token_mode=args.token_mode, sink_threshold=args.sink_threshold,
            w_method=args.w_method,
        )
    if args.out:
        _write_json(args.out, report)
        report["outputs"] = {"report": str(args.out)}
    return report


def _cmd_stwq(args):
    x = load_tensor(args.input)
    plan = stwq.build_token_plan(
        x,
        args.bits,
        pct=(args.pct_lo, args.pct_hi),
        mode=stwq.TokenMode(args.token_mode),
        sink_threshold=args.sink_threshold,
    )
    _write_json(args.out, stwq.plan_to_json(plan, args.layer))
    return {
        "mode": plan.mode.value,
        "seq_len": plan.seq_len,
        "sink_set": list(plan.sink_set),
        "param_count": len(plan.params),
        "outputs": {"plan": str(args.out)},
    }


def _cmd_dgc_select(args):
    t = load_tensor(args.features)
    if t.ndim == 3:
        features = dgc.extract_features(t, dgc.FeatureReduce(args.reduce))
    elif t.ndim == 2:
        features = t
    else:
        raise ConfigError("features file must be rank 2 [samples, dims] or rank 3 activations")
    stats = dgc.fit_set_stats(features, args.ridge_scale)
    indices = dgc.select_calibration(features, args.fraction, stats)
    _write_json(args.out, indices)
    return {
        "pool": int(features.shape[0]),
        "selected": len(indices),
        "outputs": {"indices": str(args.out)},
    }


_ANALYZE_CSV_HEADER = (
    "layer",
    "e_x", "e_x_hat", "e_w", "e_total", "cross_term_w", "cross_term_x",
    "ew_real", "ew_appro", "ew_bias", "ew_bias_ratio",
    "ex_real", "ex_appro", "ex_bias", "ex_bias_ratio",
    "ub_real", "ub_appro", "ub_bias", "ub_bias_ratio",
    "dx_real", "dx_appro", "dx_bias", "dx_bias_ratio",
    "remark1_frac_s", "remark1_frac_range", "remark1_pairs",
    "range_tracking_fraction",
)


def analyze_layer(x, w, bits_a, bits_w, pct, s):
    """One layer's worth of analysis rows; shared by the CLI and tests."""
    breakdown = analysis.loss_decompose(x, w, bits_a, bits_w, pct)
    bias = analysis.bias_report(x, w, bits_a, s, pct)
    s_eff = np.ones(np.asarray(w).shape[0]) if s is None else s
    remark = analysis.remark1_check(x, s_eff)
    range_frac = analysis.range_after_scaling_check(w, s_eff)
    return breakdown, bias, remark, range_frac


def bias_csv_row(layer, breakdown, bias, remark, range_frac):
    row = [layer]
    row += [getattr(breakdown, f) for f in ("e_x", "e_x_hat", "e_w", "e_total", "cross_term_w", "cross_term_x")]
    row += [getattr(bias, f) for f in (
        "ew_real", "ew_appro", "ew_bias", "ew_bias_ratio",
        "ex_real", "ex_appro", "ex_bias", "ex_bias_ratio",
        "ub_real", "ub_appro", "ub_bias", "ub_bias_ratio",
        "dx_real", "dx_appro", "dx_bias", "dx_bias_ratio",
    )]
    row += [remark.frac_s_monotone, remark.frac_range_preserved, remark.pair_count, range_frac]
    return row


def _cmd_analyze(args):
    x = load_tensor(args.activations)
    w = load_tensor(args.weights)
    pct = (args.pct_lo, args.pct_hi)
    s = _solve_scaling(args.scaling, x, w, args)
    breakdown, bias, remark, range_frac = analyze_layer(x, w, args.bits_a, args.bits_w, pct, s)
    csv_path = Path(f"{args.out_prefix}.csv")
    json_path = Path(f"{args.out_prefix}.json")
    _write_csv(csv_path, _ANALYZE_CSV_HEADER, [bias_csv_row(args.layer, breakdown, bias, remark, range_frac)])
    summary = {
        "layer": args.layer,
        "loss": asdict(breakdown),
        "bias": asdict(bias),
        "remark1": asdict(remark),
        "range_tracking_fraction": range_frac,
        "range_check_rule": analysis.RANGE_CHECK_RULE,
        "outputs": {"csv": str(csv_path), "json": str(json_path)},
    }
    _write_json(json_path, summary)
    return summary


def _cmd_perturb(args):
    x = load_tensor(args.activations)
    w = load_tensor(args.weights)
    pct = (args.pct_lo, args.pct_hi)
    s = gps.gps_solve(x, w, args.bits_a, args.bits_w, pct)
    result = analysis.perturbation_study(
        x, w, s, args.trials, args.amplitude, args.seed, args.bits_a, args.bits_w, pct,
        w_method=args.w_method,
    )
    rows = [["baseline", result.baseline]]
    rows += [[str(i), e] for i, e in enumerate(result.errors)]
    _write_csv(args.out, ("trial", "mse"), rows)
    errors = np.asarray(result.errors)
    return {
        "baseline": result.baseline,
        "trials": args.trials,
        "p5": float(np.percentile(errors, 5)),
        "p50": float(np.percentile(errors, 50)),
        "p95": float(np.percentile(errors, 95)),
        "frac_worse_than_baseline": float((errors >= result.baseline).mean()),
        "outputs": {"trials": str(args.out)},
    }


# -- parser --------------------------------------------------------------------

def _add_quant_flags(p, bits=True):
    if bits:
        p.add_argument("--bits-a", type=int, default=6, help="activation bit width")
        p.add_argument("--bits-w", type=int, default=6, help="weight bit width")
    p.add_argument("--pct-lo", type=float, default=0.1, help="low calibration percentile")
    p.add_argument("--pct-hi", type=float, default=99.9, help="high calibration percentile")


def build_parser():
    parser = _Parser(prog="ptqkit", description=__doc__)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap (results are thread-count independent)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic activations")
    p.add_argument("--preset", choices=synth.PRESETS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--weights-out", type=Path, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--tokens", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--out-channels", type=int, default=None)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("calib", help="calibrate quantization parameters")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--axis", choices=sorted(_AXES), default="tensor")
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--method", choices=("minmax", "percentile", "mse"), default="percentile")
    _add_quant_flags(p, bits=False)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_calib)

    p = sub.add_parser("gps", help="solve per-channel scaling factors")
    p.add_argument("--activations", type=Path, required=True)
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--method", choices=("gps", "smoothquant"), default="gps")
    p.add_argument("--alpha", type=float, default=0.5, help="smoothquant exponent")
    p.add_argument("--strict", action="store_true", help="disable factor clipping")
    _add_quant_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_gps)

    p = sub.add_parser("quant-sim", help="simulate quantized layer output error")
    p.add_argument("--activations", type=Path, required=True)
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--scaling", choices=("none", "smoothquant", "gps"), default="none")
    p.add_argument("--token-mode", choices=("tensor", "per-position", "sink-split", "dynamic"),
                   default="tensor")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--sink-threshold", type=float, default=stwq.SINK_THRESHOLD)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--w-method", choices=("mse", "minmax"), default="mse")
    _add_quant_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=_cmd_quant_sim)

    p = sub.add_parser("stwq", help="build a static token-wise quantization plan")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--bits", type=int, default=6)
    p.add_argument("--token-mode", choices=("per-position", "sink-split"), default="per-position")
    p.add_argument("--sink-threshold", type=float, default=stwq.SINK_THRESHOLD)
    p.add_argument("--layer", default="linear0")
    _add_quant_flags(p, bits=False)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_stwq)

    p = sub.add_parser("dgc-select", help="select calibration samples by entropy")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--ridge-scale", type=float, default=dgc.DEFAULT_RIDGE_SCALE)
    p.add_argument("--reduce", choices=("mean", "meanstd"), default="mean")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_dgc_select)

    p = sub.add_parser("analyze", help="loss decomposition and bias reports")
    p.add_argument("--activations", type=Path, required=True)
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--scaling", choices=("none", "smoothquant", "gps"), default="gps")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--layer", default="linear0")
    _add_quant_flags(p)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("perturb", help="perturbation study around the solved factors")
    p.add_argument("--activations", type=Path, required=True)
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--amplitude", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--w-method", choices=("mse", "minmax"), default="mse")
    _add_quant_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_perturb)

    return parser


_CATEGORIES = (
    (PtqkitError, lambda e: e.category),
    (OSError, lambda e: "io"),
    (np.linalg.LinAlgError, lambda e: "numeric"),
    (FloatingPointError, lambda e: "numeric"),
    (ValueError, lambda e: "config"),
)


def main(argv=None):
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    summary = {"command": args.command, "config": _config_echo(args)}
    try:
        summary.update(args.func(args))
    except Exception as exc:  # noqa: BLE001 - categorized below
        category = "numeric"
        for klass, pick in _CATEGORIES:
            if isinstance(exc, klass):
                category = pick(exc)
                break
        log.error("%s", exc)
        print(json.dumps({"error": {"category": category, "message": str(exc)}}, sort_keys=True))
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())

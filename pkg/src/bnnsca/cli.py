"""Command-line interface.

Subcommands: simulate (emit power + sensor traces), attack (trace batch ->
recovered images), metrics (image pair -> similarity report), experiment
(config file -> full matrix), sweep-runs, compare-placements, robustness.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from .activity import simulate_first_kernel_trace, write_power_csv
from .datasets import read_pgm, synthetic_digit, write_pgm
from .experiments import (
    ExperimentSpec,
    background_study,
    bitflip_study,
    compare_placements,
    resolve_kernel,
    resolve_sensor_config,
    run_experiment,
    spec_from_config,
    sweep_runs,
)
from .metrics import ccr, ccr_norm, mssim
from .pipeline import run_attack
from .sensor import capture_runs_from_power, read_tdc_batch, write_tdc_batch


def _add_common(parser):
    parser.add_argument("--config", default=None, help="experiment config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--board", default=None)
    parser.add_argument("--placement", default=None)
    parser.add_argument("--runs", type=int, default=None)
    parser.add_argument("--filter", choices=("running-mean", "butterworth"), default=None)
    parser.add_argument("--threshold", default=None, help="auto, otsu, or a number")
    parser.add_argument("--no-denoise", action="store_true")


def _build_spec(args, **extra):
    overrides = dict(extra)
    for key, attr in (
        ("seed", "seed"), ("out_dir", "out_dir"), ("board", "board"),
        ("placement", "placement"), ("filter", "filter"), ("threshold", "threshold"),
    ):
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "no_denoise", False):
        overrides["denoise"] = False
    if getattr(args, "runs", None):
        overrides["run_counts"] = (args.runs,)
    if args.config:
        return spec_from_config(args.config, **overrides)
    return ExperimentSpec(**overrides)


def _load_image(token):
    """Image argument: a PGM path or synthetic:<digit>[:seed]."""
    if token.startswith("synthetic:"):
        parts = token.split(":")
        digit = int(parts[1])
        seed = int(parts[2]) if len(parts) > 2 else 0
        return synthetic_digit(digit, seed=seed)
    return read_pgm(token)


def cmd_simulate(args):
    spec = _build_spec(args)
    image = _load_image(args.image)
    kernel = resolve_kernel(spec)
    sensor_cfg = resolve_sensor_config(spec)
    power = simulate_first_kernel_trace(image, kernel)
    out_dir = spec.out_dir
    os.makedirs(out_dir, exist_ok=True)
    write_power_csv(power, os.path.join(out_dir, "power.csv"), sensor_cfg.config_hash())
    n_runs = args.runs or 100
    traces = capture_runs_from_power(power, sensor_cfg, n_runs, spec.seed)
    batch_path = os.path.join(out_dir, "traces.tdcb")
    write_tdc_batch(traces, batch_path)
    print(f"wrote {n_runs} traces to {batch_path}")
    return 0


def cmd_attack(args):
    spec = _build_spec(args)
    traces = read_tdc_batch(args.traces)
    params = dict(filter=spec.filter, denoise=spec.denoise)
    if spec.threshold in ("auto", "otsu"):
        params["threshold"] = spec.threshold
    else:
        params["threshold"] = float(spec.threshold)
    recovered = run_attack(traces, **params)
    os.makedirs(spec.out_dir, exist_ok=True)
    binary_path = os.path.join(spec.out_dir, "binary.pgm")
    denoised_path = os.path.join(spec.out_dir, "denoised.pgm")
    write_pgm(recovered.binary_image, binary_path)
    write_pgm(recovered.denoised_image, denoised_path)
    print(f"threshold={recovered.threshold:.4f} ({recovered.threshold_method}); "
          f"wrote {binary_path} and {denoised_path}")
    return 0


def cmd_metrics(args):
    a = _load_image(args.image_a)
    b = _load_image(args.image_b)
    a_px = getattr(a, "pixels", a)
    b_px = getattr(b, "pixels", b)
    print(f"ccr={ccr(a_px, b_px)!r}")
    print(f"ccr_norm={ccr_norm(a_px, b_px)!r}")
    print(f"mssim={mssim(a_px, b_px)!r}")
    return 0


def cmd_experiment(args):
    spec = _build_spec(args) if args.config else _build_spec(args)
    result = run_experiment(spec)
    print(f"wrote {len(result.reports)} rows to {result.summary_csv}")
    print(f"report: {result.report_md} ({result.wall_clock_s:.1f}s)")
    return 0


def cmd_sweep_runs(args):
    spec = _build_spec(args)
    curve = sweep_runs(spec)
    for n, c, m in curve:
        print(f"runs={n:6d}  ccr_norm={c:.3f}  mssim={m:.3f}")
    return 0


def cmd_compare_placements(args):
    spec = _build_spec(args)
    rows = compare_placements(spec, n_runs=args.runs or 3000)
    for placement in ("adjacent", "cross-die", "cross-slr"):
        vals = [r["ccr_norm_denoised"] for r in rows if r["placement"] == placement]
        if vals:
            print(f"{placement:10s} mean denoised ccr_norm = {np.mean(vals):.3f}")
    return 0


def cmd_robustness(args):
    spec = _build_spec(args)
    n_runs = args.runs or 6000
    print("background value -> denoised ccr_norm")
    for row in background_study(spec, n_runs=n_runs):
        print(f"  bg={row['background']:3d}  {row['ccr_norm_denoised']:.3f}")
    for bits in (1, 2):
        print(f"lsb flips ({bits} bit{'s' if bits > 1 else ''}) -> denoised ccr_norm")
        for row in bitflip_study(spec, bits=bits, n_runs=n_runs):
            print(f"  p={row['probability']:.1f}  {row['ccr_norm_denoised']:.3f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bnnsca",
        description="Simulate and analyze the voltage side channel of a "
                    "binarized CNN accelerator.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate power and sensor traces")
    p.add_argument("image", help="PGM path or synthetic:<digit>[:seed]")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="recover an image from a trace batch")
    p.add_argument("traces", help="binary trace batch (.tdcb)")
    _add_common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("metrics", help="similarity metrics for an image pair")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("experiment", help="run a full experiment matrix")
    p.add_argument("config_positional", nargs="?", default=None,
                   help="experiment config file")
    _add_common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep-runs", help="quality vs run-count curve")
    _add_common(p)
    p.set_defaults(func=cmd_sweep_runs)

    p = sub.add_parser("compare-placements", help="sensor placement study")
    _add_common(p)
    p.set_defaults(func=cmd_compare_placements)

    p = sub.add_parser("robustness", help="background and bit-flip studies")
    _add_common(p)
    p.set_defaults(func=cmd_robustness)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config_positional", None) and not args.config:
        args.config = args.config_positional
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

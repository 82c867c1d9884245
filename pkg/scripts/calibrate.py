#!/usr/bin/env python3
"""Calibration sweep for the shipped sensor presets.

Anchors the default noise level and placement attenuations so that, on the
standard ten-digit battery with the default board preset:

  * the recovered image becomes recognizable (mean denoised ccr_norm >= 0.5)
    around 200 runs, and is below 0.5 at 100 runs;
  * adjacent placement lands in the 0.70-0.85 denoised ccr_norm band at the
    3000-run table point;
  * cross-die sits strictly between adjacent and cross-SLR, with cross-SLR
    inside 0.45-0.65.

Run:  python scripts/calibrate.py [--full]
The chosen constants are frozen into bnnsca.sensor (SensorConfig defaults
and PLACEMENT_ATTENUATION); this script reproduces the sweep behind them.
"""

import argparse

import numpy as np

from bnnsca import (
    board_config,
    capture_runs_from_power,
    generate_random_model,
    run_attack,
    synthetic_digit_set,
)
from bnnsca.activity import simulate_first_kernel_trace
from bnnsca.metrics import ccr_norm


def battery_quality(sigma, attenuation, n_runs, seed=0):
    """Mean denoised ccr_norm over the ten-digit battery."""
    images = synthetic_digit_set(seed=seed)
    kernel = generate_random_model(1).first_kernel()
    cfg = board_config("zcu104", "adjacent",
                       noise_sigma=sigma, attenuation=attenuation)
    vals = []
    for i, img in enumerate(images):
        power = simulate_first_kernel_trace(img, kernel)
        traces = capture_runs_from_power(power, cfg, n_runs, seed=100 + i)
        rec = run_attack(traces)
        vals.append(ccr_norm(img.pixels, rec.denoised_image))
    return float(np.mean(vals))


def sweep_noise(sigmas, run_counts):
    print("noise sweep (adjacent placement)")
    print("sigma | " + " | ".join(f"N={n}" for n in run_counts))
    for sigma in sigmas:
        row = [battery_quality(sigma, 1.0, n) for n in run_counts]
        print(f"{sigma:5.1f} | " + " | ".join(f"{v:.3f}" for v in row))


def sweep_attenuation(sigma, attens, n_runs):
    print(f"\nattenuation sweep at sigma={sigma}, N={n_runs}")
    for a in attens:
        print(f"  attenuation={a:.2f}  ccr_norm={battery_quality(sigma, a, n_runs):.3f}")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--full", action="store_true",
                        help="include the 6000-run points")
    args = parser.parse_args()
    run_counts = (100, 200, 500, 1000, 3000) + ((6000,) if args.full else ())
    sweep_noise((30.0, 34.0, 38.0, 42.0), run_counts)
    sweep_attenuation(34.0, (1.0, 0.6, 0.52, 0.42, 0.3, 0.22), 3000)


if __name__ == "__main__":
    main()

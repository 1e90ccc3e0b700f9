#!/usr/bin/env python3
"""
D-T Calibration

Fits D = intercept + slope * (T - T0) separately for each mode from the
extracted D values in fits.json, and reports per-temperature repeatability
and the Zeeman vs zero-field comparison.

Usage:
    python3 calibrate_dt.py
    python3 calibrate_dt.py --fits runs/a/fits.json

Output:
    - <out_dir>/calibration.json
"""

import argparse
import sys
from pathlib import Path

from pipeline import calibrate_stage, calibrations_to_dict, entries_from_fits
from run_config import add_config_arguments
from spectrum_io import read_json, write_json
from stage_cli import configure_logging, load_config_or_exit, run_script


def main():
    configure_logging()
    parser = argparse.ArgumentParser(description="Fit the D(T) calibration line")
    add_config_arguments(parser)
    parser.add_argument("--fits", help="Fit results (default: <out_dir>/fits.json)")
    args = parser.parse_args()
    config = load_config_or_exit(args)

    out_dir = Path(config.output.out_dir)
    fits_path = Path(args.fits) if args.fits else out_dir / "fits.json"
    entries = entries_from_fits(read_json(fits_path))
    print(f"🌡️  Calibrating D(T) from {len(entries)} fits\n")

    calibrations = calibrate_stage(config, entries)
    document = calibrations_to_dict(calibrations)
    for mode, (cal, _) in calibrations.items():
        print(f"  {mode}: dD/dT = {cal.slope / 1e3:.3f} +- {cal.slope_sigma / 1e3:.3f} kHz/K")
        print(f"  {mode}: residual std = {cal.residual_std / 1e3:.3f} kHz")
    if "comparison" in document:
        print(
            "  slope difference = "
            f"{document['comparison']['slope_difference_hz_per_k'] / 1e3:.3f} kHz/K"
        )
    print()

    calibration_path = write_json(document, out_dir / "calibration.json", config.output.indent_spaces)
    print(f"💾 Saved calibration to {calibration_path}")
    print("✅ Done!\n")


if __name__ == "__main__":
    run_script(main)
    sys.exit(0)

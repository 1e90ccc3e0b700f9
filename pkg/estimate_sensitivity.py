#!/usr/bin/env python3
"""
Temperature Sensitivity

Converts the noise of a parked-frequency voltage time series into a
temperature noise spectral density eta(f) for every mode and temperature,
using the steepest slope of each fitted lineshape and the calibrated |dD/dT|.

The time series comes from --timeseries, sense.timeseries_path, or is
synthesized from the [sense] noise settings.

Usage:
    python3 estimate_sensitivity.py
    python3 estimate_sensitivity.py --timeseries logged_voltage.csv

Output:
    - <out_dir>/sensitivity.json (scale factors and eta band averages)
"""

import argparse
import sys
from pathlib import Path

from pipeline import (
    StageError,
    calibrations_from_dict,
    entries_from_fits,
    load_or_synthesize_timeseries,
    sense_stage,
    sensitivity_to_dict,
)
from run_config import add_config_arguments
from spectrum_io import read_json, write_json
from stage_cli import configure_logging, load_config_or_exit, run_script


def main():
    configure_logging()
    parser = argparse.ArgumentParser(description="Estimate temperature sensitivity")
    add_config_arguments(parser)
    parser.add_argument("--fits", help="Fit results (default: <out_dir>/fits.json)")
    parser.add_argument("--calibration", help="Calibration (default: <out_dir>/calibration.json)")
    parser.add_argument("--timeseries", help="Voltage time series CSV with a # sample_rate_hz= header")
    args = parser.parse_args()
    config = load_config_or_exit(args)
    if not config.sense.enabled:
        print("⚠️  sense.enabled = false, skipping sensitivity estimate")
        return

    out_dir = Path(config.output.out_dir)
    entries = entries_from_fits(read_json(Path(args.fits) if args.fits else out_dir / "fits.json"))
    calibrations = calibrations_from_dict(
        read_json(Path(args.calibration) if args.calibration else out_dir / "calibration.json")
    )
    try:
        timeseries = load_or_synthesize_timeseries(config, args.timeseries)
    except Exception as e:
        raise StageError("sense", e) from e
    print(f"📉 Time series: {len(timeseries)} samples at {timeseries.sample_rate:g} Hz\n")

    sensitivity, _ = sense_stage(config, entries, calibrations, timeseries)
    document = sensitivity_to_dict(sensitivity)
    for mode, rows in document.items():
        for row in rows:
            print(
                f"  {mode} {row['temperature_k']:g} K: "
                f"eta(<1 Hz) = {row['avg_below_1hz_k_per_rthz']:.4g} K/rtHz, "
                f"eta(<10 Hz) = {row['avg_below_10hz_k_per_rthz']:.4g} K/rtHz"
            )
    print()

    sensitivity_path = write_json(document, out_dir / "sensitivity.json", config.output.indent_spaces)
    print(f"💾 Saved sensitivity to {sensitivity_path}")
    print("✅ Done!\n")


if __name__ == "__main__":
    run_script(main)
    sys.exit(0)

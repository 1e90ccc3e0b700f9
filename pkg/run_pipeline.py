#!/usr/bin/env python3
"""
End-to-End Thermometry Run

Runs simulate -> fit -> calibrate -> sense in one process and writes a single
JSON report plus plot-ready CSV tables. The report contains no timestamps, so
two runs with the same config and seed produce identical files.

On a stage failure the partial report (everything finished before the failure
plus an "error" entry) is still written, and the exit code names the stage:
config 2, simulate 3, fit 4, calibrate 5, sense 6, io 7.

Usage:
    python3 run_pipeline.py
    python3 run_pipeline.py --seed 7 --repeats 100
    python3 run_pipeline.py --mode zfs --out report_zfs.json
    python3 run_pipeline.py --out - --no-plots > report.json
    python3 run_pipeline.py --timeseries logged_voltage.csv --no-plots

Output:
    - <out_dir>/report.json (or --out; "-" writes the report to stdout and
      progress to stderr)
    - <out_dir>/plots/*.csv (spectrum + fit, D vs T with residuals, eta vs f)
"""

import argparse
import sys
from pathlib import Path

from pipeline import StageError, run_pipeline, write_plot_files
from run_config import add_config_arguments
from spectrum_io import dumps_json, load_timeseries_csv, write_json
from stage_cli import configure_logging, load_config_or_exit, run_script

STDOUT = "-"


def save_report(report, destination, indent, console):
    if destination == STDOUT:
        sys.stdout.write(dumps_json(report, indent))
        sys.stdout.flush()
        return
    path = write_json(report, destination, indent)
    print(f"💾 Saved report to {path}", file=console)


def main():
    configure_logging()
    parser = argparse.ArgumentParser(description="Run the full ODMR thermometry pipeline")
    add_config_arguments(parser)
    parser.add_argument(
        "--out", help='Report path, or "-" for stdout (default: <out_dir>/report.json)'
    )
    parser.add_argument("--timeseries", help="Voltage time series CSV for the sensitivity stage")
    parser.add_argument("--no-plots", action="store_true", help="Skip the plot CSV tables")
    args = parser.parse_args()
    config = load_config_or_exit(args)

    out_dir = Path(config.output.out_dir)
    destination = args.out or out_dir / "report.json"
    console = sys.stderr if destination == STDOUT else sys.stdout
    indent = config.output.indent_spaces

    print("🚀 ODMR thermometry pipeline", file=console)
    print(
        f"  modes = {', '.join(config.run.modes)}, repeats = {config.run.repeats}, seed = {config.run.seed}",
        file=console,
    )
    print(file=console)

    timeseries = load_timeseries_csv(args.timeseries) if args.timeseries else None
    try:
        report, artifacts = run_pipeline(config, timeseries)
    except StageError as e:
        if e.partial is not None:
            save_report(e.partial, destination, indent, console)
            print("⚠️  The report is partial", file=console)
        raise

    for mode, section in report["modes"].items():
        calibration = section.get("calibration")
        if calibration:
            print(f"  {mode}: dD/dT = {calibration['slope_hz_per_k'] / 1e3:.3f} kHz/K", file=console)
        for row in section.get("sensitivity", []):
            print(
                f"  {mode} {row['temperature_k']:g} K: "
                f"eta(<1 Hz) = {row['avg_below_1hz_k_per_rthz']:.4g} K/rtHz",
                file=console,
            )
    comparison = report.get("comparison")
    if comparison and comparison["median_std_ratio"] is not None:
        print(
            f"  zero-field / Zeeman repeatability ratio = {comparison['median_std_ratio']:.2f}",
            file=console,
        )
    print(file=console)

    save_report(report, destination, indent, console)

    if config.output.write_plots and not args.no_plots:
        written = write_plot_files(
            out_dir,
            artifacts["jobs"],
            artifacts["entries"],
            artifacts["calibrations"],
            artifacts["sensitivity"],
        )
        print(f"💾 Saved {len(written)} plot tables to {out_dir / 'plots'}", file=console)
    print("✅ Done!\n", file=console)


if __name__ == "__main__":
    run_script(main)
    sys.exit(0)

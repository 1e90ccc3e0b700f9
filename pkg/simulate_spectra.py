#!/usr/bin/env python3
"""
Simulate ODMR Spectra

Synthesizes one CW-ODMR spectrum per (mode, temperature, repeat) from the
settings in config.toml. D follows the configured linear D(T) law; every
spectrum gets its own noise seed so any single job can be regenerated.

Usage:
    python3 simulate_spectra.py
    python3 simulate_spectra.py --mode zeeman --repeats 50
    python3 simulate_spectra.py --config my_run.toml --out-dir runs/a

Output:
    - <out_dir>/spectra/<mode>_<T>K_r<repeat>.csv (frequency_hz,signal)
    - <out_dir>/spectra_manifest.json (job metadata consumed by fit_spectra.py)
"""

import argparse
import sys
from pathlib import Path

from pipeline import manifest_for, simulate_stage, spectrum_filename
from run_config import add_config_arguments
from spectrum_io import save_spectrum_csv, write_json
from stage_cli import configure_logging, load_config_or_exit, run_script


def main():
    configure_logging()
    parser = argparse.ArgumentParser(description="Simulate CW-ODMR spectra")
    add_config_arguments(parser)
    args = parser.parse_args()
    config = load_config_or_exit(args)

    print("🔬 Simulating ODMR spectra")
    print(f"  modes = {', '.join(config.run.modes)}")
    print(f"  temperatures = {list(config.calibration.temperatures_k)} K")
    print(f"  repeats = {config.run.repeats}, seed = {config.run.seed}")
    print()

    jobs = simulate_stage(config)

    out_dir = Path(config.output.out_dir)
    spectra_dir = out_dir / "spectra"
    for job in jobs:
        save_spectrum_csv(job.spectrum, spectra_dir / spectrum_filename(job))
    manifest_path = write_json(
        manifest_for(config, jobs),
        out_dir / "spectra_manifest.json",
        config.output.indent_spaces,
    )

    print(f"💾 Saved {len(jobs)} spectra to {spectra_dir}")
    print(f"💾 Saved manifest to {manifest_path}")
    print("✅ Done!\n")


if __name__ == "__main__":
    run_script(main)
    sys.exit(0)

#!/usr/bin/env python3
"""
Fit ODMR Spectra

Fits every spectrum listed in the simulation manifest with a sum of
Lorentzian dips (4 in Zeeman mode, 2 at zero field) and extracts D with its
propagated uncertainty.

Usage:
    python3 fit_spectra.py
    python3 fit_spectra.py --manifest output/spectra_manifest.json
    python3 fit_spectra.py --spectrum my_scan.csv --mode zfs

Output:
    - <out_dir>/fits.json (fit parameters, covariance and D extraction per spectrum)
    - with --spectrum: the fit of that single file printed as JSON
"""

import argparse
import sys
from pathlib import Path

from pipeline import (
    StageError,
    extraction_to_dict,
    fit_result_to_dict,
    fit_spectrum,
    fit_stage,
    fits_to_dict,
    jobs_from_manifest,
)
from run_config import add_config_arguments
from spectrum_io import dumps_json, load_spectrum_csv, read_json, write_json
from stage_cli import configure_logging, load_config_or_exit, run_script


def fit_single_file(config, path, mode):
    """Fit one external spectrum file and print the result."""
    spectrum = load_spectrum_csv(path)
    try:
        result, extraction = fit_spectrum(config, mode, spectrum)
    except Exception as e:
        raise StageError("fit", e) from e
    print(
        dumps_json(
            {
                "file": str(path),
                "mode": mode,
                "fit": fit_result_to_dict(result, config.output.include_covariance),
                "extraction": extraction_to_dict(extraction),
            },
            config.output.indent_spaces,
        ),
        end="",
    )


def main():
    configure_logging()
    parser = argparse.ArgumentParser(description="Fit simulated or measured ODMR spectra")
    add_config_arguments(parser)
    parser.add_argument("--manifest", help="Simulation manifest (default: <out_dir>/spectra_manifest.json)")
    parser.add_argument("--spectrum", help="Fit a single frequency_hz,signal CSV instead of a manifest")
    args = parser.parse_args()
    config = load_config_or_exit(args)

    if args.spectrum:
        fit_single_file(config, Path(args.spectrum), args.mode or config.run.modes[0])
        return

    out_dir = Path(config.output.out_dir)
    manifest_path = Path(args.manifest) if args.manifest else out_dir / "spectra_manifest.json"
    manifest = read_json(manifest_path)
    jobs = jobs_from_manifest(manifest, manifest_path.parent / "spectra", load_spectrum_csv)
    print(f"📈 Fitting {len(jobs)} spectra from {manifest_path}\n")

    entries = fit_stage(config, jobs)
    warnings = sum(1 for e in entries if e.extraction.asymmetry_warning)
    if warnings:
        print(f"⚠️  Warning: {warnings} Zeeman fit(s) with inner/outer midpoint asymmetry")

    fits_path = write_json(
        fits_to_dict(config, entries), out_dir / "fits.json", config.output.indent_spaces
    )
    print(f"💾 Saved {len(entries)} fits to {fits_path}")
    print("✅ Done!\n")


if __name__ == "__main__":
    run_script(main)
    sys.exit(0)

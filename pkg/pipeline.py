"""
Thermometry Pipeline Stages

simulate -> fit -> calibrate -> sense, shared by the stage scripts and by
run_pipeline.py. Each stage takes plain in-memory objects so the same code
runs in-process or chained through files.

Monte-Carlo repeats run on a thread pool. Job i (temperature index t,
repeat r) uses seed = run.seed + t * run.repeats + r, and results are always
reduced in job order, so reports do not depend on scheduling.
"""

import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from calibration import (
    CalibrationFit,
    CalibrationRecord,
    DExtraction,
    compare_slopes,
    extract_D_zeeman,
    extract_D_zfs,
    fit_DT,
    repeatability_std,
)
from errors import InsufficientPeaksError
from fitting import (
    FitModel,
    FitResult,
    detect_peaks,
    fit,
    fit_curve,
    split_guess,
    strongest,
)
from lineshape import (
    LorentzianPeak,
    make_grid,
    zero_field_spectrum,
    zeeman_spectrum,
)
from sensitivity import (
    scale_factor,
    sensitivity_spectrum,
    synthesize_timeseries,
    welch_psd,
)
from spectrum_io import load_timeseries_csv, save_table_csv
from spin_model import SpinParams, field_along_axis

logger = logging.getLogger(__name__)

STAGE_EXIT_CODES = {
    "config": 2,
    "simulate": 3,
    "fit": 4,
    "calibrate": 5,
    "sense": 6,
    "io": 7,
}

PEAKS_PER_MODE = {"zeeman": 4, "zfs": 2}


class StageError(Exception):
    """A pipeline stage failed; carries whatever results were already produced."""

    def __init__(self, stage, cause, partial=None):
        self.stage = stage
        self.cause = cause
        self.partial = partial
        super().__init__(f"{stage}: {cause}")

    @property
    def exit_code(self):
        return STAGE_EXIT_CODES.get(self.stage, 1)


@dataclass(frozen=True, eq=False)
class SpectrumJob:
    mode: str
    temperature_k: float
    repeat: int
    seed: int
    true_D_hz: float
    bias_field_t: float
    spectrum: object

    def describe(self):
        return {
            "mode": self.mode,
            "temperature_k": self.temperature_k,
            "repeat": self.repeat,
            "seed": self.seed,
            "true_d_hz": self.true_D_hz,
            "bias_field_t": self.bias_field_t,
        }


@dataclass(frozen=True, eq=False)
class FitEntry:
    mode: str
    temperature_k: float
    repeat: int
    seed: int
    true_D_hz: float
    bias_field_t: float
    result: FitResult
    extraction: DExtraction


# ---------------------------------------------------------------------------
# simulate


def true_D(config, temperature_k):
    cal = config.calibration
    return config.spin.D_hz + cal.true_slope_hz_per_k * (
        temperature_k - cal.reference_temperature_k
    )


def job_seed(config, t_index, repeat):
    return config.run.seed + t_index * config.run.repeats + repeat


def bias_magnitude(config, seed):
    """Bias field for one job; field_jitter draws a uniform relative offset."""
    base = config.spin.bias_field_t
    jitter = config.simulation.field_jitter
    if jitter <= 0:
        return base
    rng = np.random.default_rng([seed, 1])
    return base * (1.0 + rng.uniform(-jitter, jitter))


def plan_jobs(config):
    plan = []
    for mode in config.run.modes:
        for t_index, temperature in enumerate(config.calibration.temperatures_k):
            for repeat in range(config.run.repeats):
                plan.append((mode, t_index, temperature, repeat))
    return plan


def grid_for(config):
    return make_grid(config.spin.D_hz, config.grid.half_span_hz, config.grid.n_points)


def simulate_one(config, mode, t_index, temperature_k, repeat):
    seed = job_seed(config, t_index, repeat)
    D = true_D(config, temperature_k)
    sim = config.simulation
    freqs = grid_for(config)
    if mode == "zeeman":
        bias = bias_magnitude(config, seed)
        params = SpinParams(
            D=D,
            E=config.spin.E_hz,
            gamma_e=config.spin.gamma_e_hz_per_t,
            B=field_along_axis(bias, 1),
        )
        spectrum = zeeman_spectrum(
            params,
            fwhm=sim.zeeman_fwhm_hz,
            per_axis_contrast=sim.per_axis_contrast,
            freqs=freqs,
            noise_sigma=sim.noise_sigma,
            seed=seed,
        )
    else:
        bias = 0.0
        params = SpinParams(D=D, E=config.spin.E_hz, gamma_e=config.spin.gamma_e_hz_per_t)
        spectrum = zero_field_spectrum(
            params,
            fwhm=sim.zfs_fwhm_hz,
            contrast=sim.zfs_contrast,
            freqs=freqs,
            noise_sigma=sim.noise_sigma,
            seed=seed,
        )
    return SpectrumJob(mode, float(temperature_k), repeat, seed, D, bias, spectrum)


def _run_ordered(stage, func, items, max_workers):
    """
    Apply func over items on a thread pool, results in item order.

    Every job runs to completion. If any failed, the first failure (in item
    order) is raised as a StageError whose partial holds all successful
    results.
    """
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = [executor.submit(func, item) for item in items]
    results, failure = [], None
    for future in futures:
        error = future.exception()
        if error is None:
            results.append(future.result())
        elif failure is None:
            failure = error
    if failure is not None:
        raise StageError(stage, failure, partial=results) from failure
    return results


def simulate_stage(config):
    plan = plan_jobs(config)
    logger.info("simulating %d spectra", len(plan))
    return _run_ordered(
        "simulate",
        lambda item: simulate_one(config, *item),
        plan,
        config.run.max_workers,
    )


# ---------------------------------------------------------------------------
# fit


def initial_guesses(config, mode, spectrum):
    n_peaks = PEAKS_PER_MODE[mode]
    guesses = detect_peaks(spectrum, config.fit.min_prominence)
    if mode == "zfs" and 0 < len(guesses) < n_peaks:
        # the overlapped double dip shows a single minimum
        return split_guess(strongest(guesses, 1)[0], n_peaks)
    if len(guesses) < n_peaks:
        raise InsufficientPeaksError(
            f"{mode} spectrum shows {len(guesses)} dips, {n_peaks} needed"
        )
    return strongest(guesses, n_peaks)


def extract(mode, result):
    return extract_D_zeeman(result) if mode == "zeeman" else extract_D_zfs(result)


def shares_fwhm(config, mode):
    return config.fit.zfs_shared_fwhm if mode == "zfs" else config.fit.shared_fwhm


def fit_spectrum(config, mode, spectrum):
    guesses = initial_guesses(config, mode, spectrum)
    result = fit(
        spectrum,
        PEAKS_PER_MODE[mode],
        init=guesses,
        shared_fwhm=shares_fwhm(config, mode),
        max_iterations=config.fit.max_iterations,
    )
    return result, extract(mode, result)


def fit_one(config, job):
    result, extraction = fit_spectrum(config, job.mode, job.spectrum)
    return FitEntry(
        mode=job.mode,
        temperature_k=job.temperature_k,
        repeat=job.repeat,
        seed=job.seed,
        true_D_hz=job.true_D_hz,
        bias_field_t=job.bias_field_t,
        result=result,
        extraction=extraction,
    )


def fit_stage(config, jobs):
    logger.info("fitting %d spectra", len(jobs))
    return _run_ordered(
        "fit", lambda job: fit_one(config, job), jobs, config.run.max_workers
    )


# ---------------------------------------------------------------------------
# calibrate


def entries_by_mode(entries):
    grouped = {}
    for entry in entries:
        grouped.setdefault(entry.mode, []).append(entry)
    return grouped


def per_temperature_stats(entries):
    rows = []
    temperatures = sorted({e.temperature_k for e in entries})
    for temperature in temperatures:
        group = [e for e in entries if e.temperature_k == temperature]
        Ds = [e.extraction.D for e in group]
        rows.append(
            {
                "temperature_k": temperature,
                "true_d_hz": group[0].true_D_hz,
                "mean_d_hz": float(np.mean(Ds)),
                "std_d_hz": repeatability_std(Ds) if len(Ds) >= 2 else None,
                "mean_sigma_d_hz": float(np.mean([e.extraction.sigma_D for e in group])),
                "repeats": len(group),
                "asymmetry_warnings": sum(
                    1 for e in group if e.extraction.asymmetry_warning
                ),
            }
        )
    return rows


def calibrate_mode(config, entries):
    records = [CalibrationRecord(e.temperature_k, e.extraction) for e in entries]
    cal = fit_DT(records, T0=config.calibration.reference_temperature_k)
    return cal, per_temperature_stats(entries)


def calibrate_stage(config, entries):
    """Per mode: (CalibrationFit, per-temperature statistics)."""
    calibrations = {}
    try:
        for mode, group in entries_by_mode(entries).items():
            calibrations[mode] = calibrate_mode(config, group)
            logger.info(
                "%s calibration: slope %.6g Hz/K", mode, calibrations[mode][0].slope
            )
    except Exception as e:
        raise StageError("calibrate", e, partial=calibrations) from e
    return calibrations


def comparison(calibrations):
    """Zeeman vs zero-field summary when both modes ran."""
    if "zeeman" not in calibrations or "zfs" not in calibrations:
        return None
    zee_cal, zee_rows = calibrations["zeeman"]
    zfs_cal, zfs_rows = calibrations["zfs"]
    ratios = [
        zfs["std_d_hz"] / zee["std_d_hz"]
        for zee, zfs in zip(zee_rows, zfs_rows)
        if zee["std_d_hz"] and zfs["std_d_hz"] is not None
    ]
    return {
        "slope_difference_hz_per_k": compare_slopes(zee_cal, zfs_cal),
        "std_ratio_zfs_over_zeeman": ratios,
        "median_std_ratio": statistics.median(ratios) if ratios else None,
    }


# ---------------------------------------------------------------------------
# sense


def load_or_synthesize_timeseries(config, path=None):
    sense = config.sense
    path = path or sense.timeseries_path
    if path:
        return load_timeseries_csv(path)
    n_samples = int(round(sense.duration_s * sense.sample_rate_hz))
    return synthesize_timeseries(
        sense.sample_rate_hz,
        n_samples,
        sense.white_density_v_per_rthz,
        sense.flicker_density_v_per_rthz,
        dc_level=sense.volts_per_unit,
        seed=config.run.seed,
    )


def park_window(mode, model):
    """Zeeman mode parks on the lowest outer dip; zero-field scans the whole line."""
    if mode != "zeeman":
        return None
    peaks = sorted(model.peaks, key=lambda p: p.center)
    outer = peaks[0]
    half = 3.0 * outer.fwhm
    if len(peaks) > 1:
        half = min(half, 0.5 * (peaks[1].center - outer.center))
    return (outer.center - half, outer.center + half)


def sense_stage(config, entries, calibrations, timeseries):
    """
    Scale factor and sensitivity per mode and temperature.

    Uses the first repeat at each temperature and the mode's own calibrated
    |dD/dT| unless sense.dDdT_override_hz_per_k is set.
    """
    results = {}
    try:
        psd = welch_psd(timeseries, config.sense.segment_len, config.sense.overlap)
        for mode, group in entries_by_mode(entries).items():
            cal = calibrations[mode][0] if mode in calibrations else None
            dDdT = config.sense.dDdT_override_hz_per_k
            if dDdT is None:
                if cal is None:
                    raise ValueError(f"no calibration for mode {mode} and no dD/dT override")
                dDdT = cal.slope
            rows = []
            for entry in group:
                if entry.repeat != 0:
                    continue
                model = entry.result.model
                sf = scale_factor(
                    model, config.sense.volts_per_unit, window=park_window(mode, model)
                )
                report = sensitivity_spectrum(psd, sf, dDdT)
                rows.append((entry.temperature_k, sf, report, dDdT))
            results[mode] = rows
    except Exception as e:
        raise StageError("sense", e, partial=results) from e
    return results, psd


# ---------------------------------------------------------------------------
# serialization


def fit_result_to_dict(result, include_covariance=True):
    doc = {
        "baseline": result.model.baseline,
        "peaks": [
            {"center_hz": p.center, "fwhm_hz": p.fwhm, "contrast": p.contrast}
            for p in result.model.peaks
        ],
        "residual_norm": result.residual_norm,
        "initial_residual_norm": result.initial_residual_norm,
        "iterations": result.iterations,
        "converged": result.converged,
        "shared_fwhm": result.shared_fwhm,
        "sigmas": [result.sigma(i) for i in range(len(result.covariance))],
    }
    if include_covariance:
        doc["covariance"] = result.covariance.tolist()
    return doc


def fit_result_from_dict(doc):
    model = FitModel(
        doc["baseline"],
        [LorentzianPeak(p["center_hz"], p["fwhm_hz"], p["contrast"]) for p in doc["peaks"]],
    )
    size = 1 + 3 * model.n_peaks
    if "covariance" in doc:
        covariance = np.array(doc["covariance"], dtype=float)
    else:
        covariance = np.diag(np.square(np.array(doc.get("sigmas", [math.nan] * size))))
    return FitResult(
        model=model,
        covariance=covariance,
        residual_norm=doc["residual_norm"],
        iterations=doc["iterations"],
        converged=doc["converged"],
        initial_residual_norm=doc.get("initial_residual_norm", math.nan),
        shared_fwhm=doc.get("shared_fwhm", False),
    )


def extraction_to_dict(extraction):
    return {
        "d_hz": extraction.D,
        "sigma_d_hz": extraction.sigma_D,
        "mode": extraction.mode,
        "e_or_bsplit_hz": extraction.E_or_Bsplit,
        "asymmetry_warning": extraction.asymmetry_warning,
    }


def extraction_from_dict(doc):
    return DExtraction(
        D=doc["d_hz"],
        sigma_D=doc["sigma_d_hz"],
        mode=doc["mode"],
        E_or_Bsplit=doc["e_or_bsplit_hz"],
        asymmetry_warning=doc.get("asymmetry_warning"),
    )


def entry_to_dict(entry, include_covariance=True):
    return {
        "mode": entry.mode,
        "temperature_k": entry.temperature_k,
        "repeat": entry.repeat,
        "seed": entry.seed,
        "true_d_hz": entry.true_D_hz,
        "bias_field_t": entry.bias_field_t,
        "fit": fit_result_to_dict(entry.result, include_covariance),
        "extraction": extraction_to_dict(entry.extraction),
    }


def entry_from_dict(doc):
    return FitEntry(
        mode=doc["mode"],
        temperature_k=doc["temperature_k"],
        repeat=doc["repeat"],
        seed=doc["seed"],
        true_D_hz=doc["true_d_hz"],
        bias_field_t=doc["bias_field_t"],
        result=fit_result_from_dict(doc["fit"]),
        extraction=extraction_from_dict(doc["extraction"]),
    )


def calibration_to_dict(cal):
    return {
        "slope_hz_per_k": cal.slope,
        "abs_slope_hz_per_k": abs(cal.slope),
        "intercept_hz": cal.intercept,
        "reference_temperature_k": cal.T0,
        "residual_std_hz": cal.residual_std,
        "slope_sigma_hz_per_k": cal.slope_sigma,
        "intercept_sigma_hz": cal.intercept_sigma,
        "temperatures_k": list(cal.temperatures),
        "residuals_hz": list(cal.residuals),
    }


def calibration_from_dict(doc):
    return CalibrationFit(
        slope=doc["slope_hz_per_k"],
        intercept=doc["intercept_hz"],
        residual_std=doc["residual_std_hz"],
        residuals=tuple(doc.get("residuals_hz", ())),
        T0=doc["reference_temperature_k"],
        slope_sigma=doc.get("slope_sigma_hz_per_k", 0.0),
        intercept_sigma=doc.get("intercept_sigma_hz", 0.0),
        temperatures=tuple(doc.get("temperatures_k", ())),
    )


def calibrations_to_dict(calibrations):
    doc = {
        mode: {"calibration": calibration_to_dict(cal), "temperatures": rows}
        for mode, (cal, rows) in calibrations.items()
    }
    compared = comparison(calibrations)
    if compared is not None:
        doc["comparison"] = compared
    return doc


def calibrations_from_dict(doc):
    return {
        mode: (calibration_from_dict(section["calibration"]), section["temperatures"])
        for mode, section in doc.items()
        if mode in PEAKS_PER_MODE
    }


def sensitivity_to_dict(sensitivity):
    return {
        mode: [
            {
                "temperature_k": temperature,
                "scale_factor_v_per_hz": sf.slope_v_per_hz,
                "park_freq_hz": sf.park_freq,
                "dddt_hz_per_k": dDdT,
                "avg_below_1hz_k_per_rthz": report.avg_below_1hz,
                "avg_below_10hz_k_per_rthz": report.avg_below_10hz,
            }
            for temperature, sf, report, dDdT in rows
        ]
        for mode, rows in sensitivity.items()
    }


# ---------------------------------------------------------------------------
# end to end


def assemble_report(config, entries, calibrations=None, sensitivity=None, error=None):
    include_covariance = config.output.include_covariance
    modes = {}
    for mode, group in entries_by_mode(entries).items():
        modes[mode] = {"spectra": [entry_to_dict(e, include_covariance) for e in group]}
    if calibrations:
        for mode, section in calibrations_to_dict(calibrations).items():
            if mode == "comparison":
                continue
            modes.setdefault(mode, {}).update(section)
    if sensitivity:
        for mode, rows in sensitivity_to_dict(sensitivity).items():
            modes.setdefault(mode, {})["sensitivity"] = rows

    report = {"status": "ok" if error is None else "error", "config": config.to_dict()}
    if error is not None:
        report["error"] = {"stage": error.stage, "cause": f"{type(error.cause).__name__}: {error.cause}"}
    report["modes"] = modes
    if calibrations:
        compared = comparison(calibrations)
        if compared is not None:
            report["comparison"] = compared
    return report


def run_pipeline(config, timeseries=None):
    """
    Run all stages in-process.

    Returns (report, artifacts) where artifacts holds the in-memory jobs,
    entries, calibrations, sensitivity rows and PSD for plot output. On a
    stage failure raises StageError whose `partial` is the partial report.
    """
    jobs, entries, calibrations, sensitivity, psd = [], [], {}, {}, None
    try:
        jobs = simulate_stage(config)
        entries = fit_stage(config, jobs)
        calibrations = calibrate_stage(config, entries)
        if config.sense.enabled:
            try:
                series = timeseries if timeseries is not None else load_or_synthesize_timeseries(config)
            except Exception as e:
                raise StageError("sense", e) from e
            sensitivity, psd = sense_stage(config, entries, calibrations, series)
    except StageError as e:
        if e.stage == "fit" and e.partial:
            entries = e.partial
        e.partial = assemble_report(config, entries, calibrations, sensitivity, error=e)
        raise

    report = assemble_report(config, entries, calibrations, sensitivity)
    artifacts = {
        "jobs": jobs,
        "entries": entries,
        "calibrations": calibrations,
        "sensitivity": sensitivity,
        "psd": psd,
    }
    return report, artifacts


def _temperature_tag(temperature_k):
    return f"{temperature_k:g}K"


def write_plot_files(out_dir, jobs, entries, calibrations, sensitivity):
    """Plot-ready CSVs: spectrum + fit, D vs T with residuals, eta vs f."""
    plots = Path(out_dir) / "plots"
    written = []
    for job, entry in zip(jobs, entries):
        if job.repeat != 0:
            continue
        spectrum = job.spectrum
        written.append(
            save_table_csv(
                {
                    "frequency_hz": spectrum.freqs,
                    "signal": spectrum.signal,
                    "fit": fit_curve(entry.result, spectrum.freqs),
                },
                plots / f"{job.mode}_{_temperature_tag(job.temperature_k)}_spectrum.csv",
            )
        )
    for mode, (cal, _) in calibrations.items():
        group = [e for e in entries if e.mode == mode]
        written.append(
            save_table_csv(
                {
                    "temperature_k": [e.temperature_k for e in group],
                    "d_hz": [e.extraction.D for e in group],
                    "sigma_d_hz": [e.extraction.sigma_D for e in group],
                    "residual_hz": list(cal.residuals),
                },
                plots / f"{mode}_calibration.csv",
            )
        )
    for mode, rows in (sensitivity or {}).items():
        for temperature, _, report, _ in rows:
            written.append(
                save_table_csv(
                    {"frequency_hz": report.freqs, "eta_k_per_rthz": report.eta},
                    plots / f"{mode}_{_temperature_tag(temperature)}_eta.csv",
                )
            )
    return written


# ---------------------------------------------------------------------------
# chained stage files


def spectrum_filename(job):
    return f"{job.mode}_{_temperature_tag(job.temperature_k)}_r{job.repeat}.csv"


def manifest_for(config, jobs):
    return {
        "config": config.to_dict(),
        "spectra": [dict(job.describe(), file=spectrum_filename(job)) for job in jobs],
    }


def jobs_from_manifest(manifest, spectra_dir, load_spectrum):
    jobs = []
    for doc in manifest["spectra"]:
        jobs.append(
            SpectrumJob(
                mode=doc["mode"],
                temperature_k=doc["temperature_k"],
                repeat=doc["repeat"],
                seed=doc["seed"],
                true_D_hz=doc["true_d_hz"],
                bias_field_t=doc["bias_field_t"],
                spectrum=load_spectrum(Path(spectra_dir) / doc["file"]),
            )
        )
    return jobs


def fits_to_dict(config, entries):
    include_covariance = config.output.include_covariance
    return {
        "config": config.to_dict(),
        "fits": [entry_to_dict(e, include_covariance) for e in entries],
    }


def entries_from_fits(doc):
    return [entry_from_dict(d) for d in doc["fits"]]

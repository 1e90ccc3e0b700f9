"""
Temperature Sensitivity

Converts detector voltage noise into temperature noise:

    eta(f) = sqrt(PSD_V(f)) / (scale_factor * |dD/dT|)     [K / sqrt(Hz)]

The scale factor is the steepest slope of the fitted ODMR line (V/Hz) at
which the microwave frequency is parked; the PSD is a one-sided Welch
estimate of the logged fluorescence voltage.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps
from scipy.optimize import minimize_scalar

from errors import (
    EmptyBandError,
    InsufficientDataError,
    InvalidSegmentError,
    ZeroSlopeError,
)
from fitting import model_derivative

logger = logging.getLogger(__name__)

SCAN_POINTS = 20001
SCAN_MARGIN_FWHM = 5.0
MIN_SEGMENT = 8
DEFAULT_SEGMENTS = 8
DEFAULT_OVERLAP = 0.5
BAND_CUTOFFS_HZ = (1.0, 10.0)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    sample_rate: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 2:
            raise InsufficientDataError("time series needs at least 2 samples")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("time series contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class ScaleFactor:
    slope_v_per_hz: float
    park_freq: float

    def __post_init__(self):
        if not self.slope_v_per_hz > 0:
            raise ZeroSlopeError("scale factor must be positive")


@dataclass(frozen=True, eq=False)
class PsdEstimate:
    freqs: np.ndarray
    density: np.ndarray


@dataclass(frozen=True, eq=False)
class SensitivityReport:
    freqs: np.ndarray
    eta: np.ndarray
    avg_below_1hz: float
    avg_below_10hz: float


def scale_factor(model, volts_per_unit=1.0, window=None, n_scan=SCAN_POINTS):
    """
    Steepest |dS/df| of a fitted line, in V/Hz.

    Dense scan over window (default: all dips +- 5 FWHM), refined by a
    bounded scalar search around the best scan point.
    """
    if model.n_peaks == 0:
        raise ZeroSlopeError("model has no dips")
    if window is None:
        width = max(peak.fwhm for peak in model.peaks)
        lo = min(peak.center for peak in model.peaks) - SCAN_MARGIN_FWHM * width
        hi = max(peak.center for peak in model.peaks) + SCAN_MARGIN_FWHM * width
    else:
        lo, hi = (float(x) for x in window)
        if not hi > lo:
            raise ValueError(f"empty scan window {window!r}")

    scan = np.linspace(lo, hi, n_scan)
    magnitude = np.abs(model_derivative(model, scan))
    best = int(np.argmax(magnitude))
    if not magnitude[best] > 0 or not math.isfinite(magnitude[best]):
        raise ZeroSlopeError("lineshape has zero slope everywhere in the window")

    step = scan[1] - scan[0]
    left = max(lo, scan[best] - 2.0 * step)
    right = min(hi, scan[best] + 2.0 * step)
    refined = minimize_scalar(
        lambda f: -abs(model_derivative(model, f)),
        bounds=(left, right),
        method="bounded",
        options={"xatol": step * 1e-6},
    )
    park, peak_slope = float(scan[best]), float(magnitude[best])
    if refined.success and -refined.fun > peak_slope:
        park, peak_slope = float(refined.x), float(-refined.fun)
    return ScaleFactor(slope_v_per_hz=peak_slope * volts_per_unit, park_freq=park)


def default_segment_len(n_samples, segments=DEFAULT_SEGMENTS, overlap=DEFAULT_OVERLAP):
    """Segment length giving `segments` windows at the given overlap."""
    return int(n_samples / (segments * (1.0 - overlap) + overlap))


def welch_psd(ts, segment_len=None, overlap=DEFAULT_OVERLAP, window="hann"):
    """One-sided Welch PSD (V^2/Hz) of a voltage time series."""
    if not 0.0 <= overlap < 1.0:
        raise InvalidSegmentError(f"overlap must be in [0, 1), got {overlap}")
    if segment_len is None:
        segment_len = default_segment_len(len(ts), overlap=overlap)
    segment_len = int(segment_len)
    if segment_len < MIN_SEGMENT:
        raise InvalidSegmentError(
            f"segment length {segment_len} is below {MIN_SEGMENT} samples"
        )
    if segment_len > len(ts):
        raise InvalidSegmentError(
            f"segment length {segment_len} exceeds series length {len(ts)}"
        )

    noverlap = min(int(round(overlap * segment_len)), segment_len - 1)
    freqs, density = sps.welch(
        ts.samples,
        fs=ts.sample_rate,
        window=window,
        nperseg=segment_len,
        noverlap=noverlap,
        detrend="constant",
        return_onesided=True,
        scaling="density",
    )
    return PsdEstimate(freqs=freqs, density=density)


def band_average(freqs, eta, cutoff):
    """Mean eta over bins with 0 < f <= cutoff."""
    band = (freqs > 0) & (freqs <= cutoff)
    if not np.any(band):
        raise EmptyBandError(f"no PSD bins in (0, {cutoff:g}] Hz")
    return float(np.mean(eta[band]))


def sensitivity_spectrum(psd, sf, dDdT):
    """eta(f) in K/sqrt(Hz) plus averages below 1 Hz and 10 Hz."""
    if dDdT == 0:
        raise ZeroSlopeError("dD/dT must be nonzero")
    eta = np.sqrt(psd.density) / (sf.slope_v_per_hz * abs(dDdT))
    below_1, below_10 = (band_average(psd.freqs, eta, c) for c in BAND_CUTOFFS_HZ)
    return SensitivityReport(
        freqs=psd.freqs, eta=eta, avg_below_1hz=below_1, avg_below_10hz=below_10
    )


def noise_density_for_target(target_eta, sf, dDdT):
    """Flat voltage noise density (V/sqrt(Hz)) giving a uniform eta of target_eta."""
    return target_eta * sf.slope_v_per_hz * abs(dDdT)


def synthesize_timeseries(
    sample_rate,
    n_samples,
    white_density,
    flicker_density=0.0,
    dc_level=0.0,
    seed=0,
):
    """
    Parked-frequency detector voltage with white and 1/f noise.

    white_density is the one-sided amplitude density (V/sqrt(Hz));
    flicker_density is the 1/f amplitude density at 1 Hz. The 1/f part is
    shaped in the Fourier domain with the DC bin removed.
    """
    if n_samples < 2:
        raise InsufficientDataError("time series needs at least 2 samples")
    if white_density < 0 or flicker_density < 0:
        raise ValueError("noise densities must be non-negative")
    rng = np.random.default_rng(seed)
    samples = np.full(n_samples, float(dc_level))

    if white_density > 0:
        sigma = white_density * math.sqrt(sample_rate / 2.0)
        samples += rng.normal(0.0, sigma, n_samples)

    if flicker_density > 0:
        spectrum = np.fft.rfft(rng.normal(0.0, 1.0, n_samples))
        freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
        shape = np.zeros_like(freqs)
        shape[1:] = flicker_density * np.sqrt(sample_rate / 2.0 / freqs[1:])
        samples += np.fft.irfft(spectrum * shape, n=n_samples)

    return TimeSeries(sample_rate=float(sample_rate), samples=samples)

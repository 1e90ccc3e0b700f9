"""
CW-ODMR Lineshape Synthesis

Normalized fluorescence spectra built as Lorentzian dips on a unit baseline:

    signal(f) = 1 - sum_k C_k (w_k/2)^2 / ((f - c_k)^2 + (w_k/2)^2) + noise

Two field configurations are supported:
- zero field: a double dip at D -+ E
- [111] bias field: eight transitions over the four NV axes, which show up as
  four dips (outer pair from the aligned axis, inner pair from the other three)
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import InvalidModeError, ModelError, RegimeError
from spin_model import NVAxisSet, approx_transitions

logger = logging.getLogger(__name__)

DEFAULT_HALF_SPAN_HZ = 250e6
DEFAULT_GRID_POINTS = 601
ALIGNMENT_TOLERANCE_RAD = 1e-6


@dataclass(frozen=True)
class LorentzianPeak:
    center: float
    fwhm: float
    contrast: float

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError(f"fwhm must be positive, got {self.fwhm}")
        if not 0 < self.contrast < 1:
            raise ValueError(f"contrast must be in (0, 1), got {self.contrast}")

    def depth(self, freqs):
        """Dip depth C * L(f) at each frequency."""
        hwhm2 = (0.5 * self.fwhm) ** 2
        detuning = np.asarray(freqs, dtype=float) - self.center
        return self.contrast * hwhm2 / (detuning * detuning + hwhm2)


@dataclass(frozen=True, eq=False)
class Spectrum:
    freqs: np.ndarray
    signal: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        signal = np.asarray(self.signal, dtype=float)
        if freqs.ndim != 1 or freqs.shape != signal.shape:
            raise ValueError(
                f"freqs and signal must be 1-D of equal length, got "
                f"{freqs.shape} and {signal.shape}"
            )
        if len(freqs) >= 2 and not np.all(np.diff(freqs) > 0):
            raise ValueError("frequency grid must be strictly increasing")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "signal", signal)

    def __len__(self):
        return len(self.freqs)

    @property
    def step(self):
        """Median grid spacing (Hz)."""
        return float(np.median(np.diff(self.freqs)))

    def shifted(self, delta):
        return Spectrum(self.freqs + delta, self.signal.copy())


def make_grid(center, half_span=DEFAULT_HALF_SPAN_HZ, n_points=DEFAULT_GRID_POINTS):
    """Uniform frequency grid center +- half_span."""
    if n_points < 2:
        raise ValueError("grid needs at least 2 points")
    if not half_span > 0:
        raise ValueError("half_span must be positive")
    return np.linspace(center - half_span, center + half_span, n_points)


def total_depth(peaks, freqs):
    freqs = np.asarray(freqs, dtype=float)
    depth = np.zeros_like(freqs)
    for peak in peaks:
        depth += peak.depth(freqs)
    return depth


def synthesize(peaks, freqs, noise_sigma=0.0, seed=0):
    """Spectrum of additive Lorentzian dips plus white Gaussian noise."""
    freqs = np.asarray(freqs, dtype=float)
    if freqs.ndim != 1 or len(freqs) < 2 or not np.all(np.diff(freqs) > 0):
        raise ValueError("grid must be a strictly increasing 1-D array")
    if not noise_sigma >= 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")

    depth = total_depth(peaks, freqs)
    if depth.size and float(np.max(depth)) >= 1.0:
        raise ModelError(
            f"summed dip depth reaches {float(np.max(depth)):.4g} >= 1; "
            "signal would be nonpositive"
        )

    signal = 1.0 - depth
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        signal = signal + rng.normal(0.0, noise_sigma, size=freqs.shape)
    return Spectrum(freqs, signal)


def zeeman_peaks(params, fwhm, per_axis_contrast, axes=None, weights=None):
    """
    The eight transition lines of the four axes.

    Each axis carries per_axis_contrast * 4 * weight, split evenly between
    its two lines, so with equal weights a zero field stacks all eight lines
    into one dip of depth 4 * per_axis_contrast.
    """
    axes = NVAxisSet() if axes is None else axes
    if weights is None:
        weights = np.full(len(axes), 1.0 / len(axes))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(axes),) or np.any(weights < 0):
        raise ValueError("weights must be one non-negative value per axis")
    weights = weights / weights.sum()

    peaks = []
    for index, axis in enumerate(axes):
        pair = approx_transitions(params, axis, axis_index=index + 1)
        line_contrast = 0.5 * per_axis_contrast * len(axes) * weights[index]
        if line_contrast <= 0:
            continue
        peaks.append(LorentzianPeak(pair.f_minus, fwhm, line_contrast))
        peaks.append(LorentzianPeak(pair.f_plus, fwhm, line_contrast))
    return peaks


def field_misalignment(params, axes=None):
    """Angle (rad) between B and axis 1; zero for a vanishing field."""
    axes = NVAxisSet() if axes is None else axes
    B = params.field_vector
    norm = float(np.linalg.norm(B))
    if norm == 0.0:
        return 0.0
    cosine = float(np.dot(B, axes[0])) / norm
    return math.acos(min(1.0, max(-1.0, cosine)))


def zeeman_spectrum(
    params,
    axes=None,
    fwhm=9e6,
    per_axis_contrast=0.02,
    freqs=None,
    noise_sigma=0.0,
    seed=0,
    weights=None,
    require_alignment=True,
):
    """
    Spectrum under a bias field along axis 1 ([111]).

    Outer dips sit at D +- gamma_e B, inner dips at D +- gamma_e B / 3 with
    three times the depth. Pass require_alignment=False to synthesize a
    misaligned field (up to eight resolved dips).
    """
    axes = NVAxisSet() if axes is None else axes
    if params.field_ratio >= 0.5:
        raise RegimeError(params.field_ratio)
    if require_alignment:
        angle = field_misalignment(params, axes)
        if angle > ALIGNMENT_TOLERANCE_RAD:
            raise InvalidModeError(
                f"bias field is {angle:.3g} rad off axis 1; "
                "pass require_alignment=False for a misaligned field"
            )
    if freqs is None:
        freqs = make_grid(params.D)
    peaks = zeeman_peaks(params, fwhm, per_axis_contrast, axes, weights)
    return synthesize(peaks, freqs, noise_sigma, seed)


def zero_field_peaks(params, fwhm, contrast):
    return [
        LorentzianPeak(params.D - params.E, fwhm, contrast),
        LorentzianPeak(params.D + params.E, fwhm, contrast),
    ]


def zero_field_spectrum(
    params, fwhm=21e6, contrast=0.01, freqs=None, noise_sigma=0.0, seed=0
):
    """Double dip at D -+ E; requires B = 0."""
    if any(component != 0.0 for component in params.B):
        raise InvalidModeError("nonzero field; use zeeman_spectrum instead")
    if freqs is None:
        freqs = make_grid(params.D)
    return synthesize(zero_field_peaks(params, fwhm, contrast), freqs, noise_sigma, seed)


def measured_fwhm(spectrum):
    """FWHM of the deepest dip, by linear interpolation of the half-depth crossings."""
    depth = 1.0 - spectrum.signal
    k = int(np.argmax(depth))
    half = 0.5 * depth[k]

    left = k
    while left > 0 and depth[left] > half:
        left -= 1
    right = k
    while right < len(depth) - 1 and depth[right] > half:
        right += 1

    f = spectrum.freqs
    f_left = np.interp(half, [depth[left], depth[left + 1]], [f[left], f[left + 1]])
    f_right = np.interp(half, [depth[right], depth[right - 1]], [f[right], f[right - 1]])
    return float(f_right - f_left)

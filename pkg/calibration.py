"""
D-T Calibration

Extracts the axial zero-field splitting D from fitted spectra, fits the
linear D(T) relationship, inverts it for thermometry, and computes
repeatability statistics.

Two extraction modes:
- zero_field: D is the midpoint of the two fitted dips at D -+ E
- zeeman: D is the midpoint of the outer pair of the four fitted dips, i.e.
  the two transitions of the NV axis aligned with the [111] bias field. A
  field change moves that pair antisymmetrically, so the midpoint only
  follows temperature.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from errors import (
    DegenerateCalibrationError,
    InsufficientDataError,
    InsufficientPeaksError,
    NonInvertibleError,
    UnconvergedFitError,
)

logger = logging.getLogger(__name__)

REFERENCE_TEMPERATURE_K = 298.0
TEMPERATURE_BAND_K = (100.0, 700.0)
MIN_RECORDS = 3
MIN_SPAN_K = 10.0

ZERO_FIELD = "zero_field"
ZEEMAN = "zeeman"


@dataclass(frozen=True)
class DExtraction:
    D: float
    sigma_D: float
    mode: str
    E_or_Bsplit: float
    asymmetry_warning: Optional[str] = None

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if not self.sigma_D >= 0:
            raise ValueError(f"sigma_D must be >= 0, got {self.sigma_D}")
        if self.mode not in (ZERO_FIELD, ZEEMAN):
            raise ValueError(f"unknown extraction mode {self.mode!r}")


@dataclass(frozen=True)
class CalibrationRecord:
    T_ref: float
    extraction: DExtraction

    def __post_init__(self):
        lo, hi = TEMPERATURE_BAND_K
        if not lo <= self.T_ref <= hi:
            raise ValueError(f"T_ref {self.T_ref} K outside {lo}-{hi} K")


@dataclass(frozen=True)
class CalibrationFit:
    slope: float
    intercept: float
    residual_std: float
    residuals: Tuple[float, ...] = ()
    T0: float = REFERENCE_TEMPERATURE_K
    slope_sigma: float = 0.0
    intercept_sigma: float = 0.0
    temperatures: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not all(
            math.isfinite(x) for x in (self.slope, self.intercept, self.residual_std)
        ):
            raise ValueError("calibration parameters must be finite")
        if self.residual_std < 0:
            raise ValueError("residual_std must be >= 0")


@dataclass(frozen=True)
class TemperatureEstimate:
    kelvin: float
    uncertainty: float


def _midpoint_sigma(result, i, j):
    variance = 0.25 * (
        result.covariance[result.center_index(i), result.center_index(i)]
        + result.covariance[result.center_index(j), result.center_index(j)]
        + 2.0 * result.center_covariance(i, j)
    )
    return math.sqrt(max(float(variance), 0.0))


def _require_converged(result):
    if not result.converged:
        raise UnconvergedFitError(
            f"fit stopped after {result.iterations} iterations without converging"
        )


def extract_D_zeeman(result):
    """D from the outer pair of a converged 4-peak fit."""
    _require_converged(result)
    n = result.model.n_peaks
    if n != 4:
        raise InsufficientPeaksError(
            f"Zeeman extraction needs exactly 4 resolved dips, fit has {n}"
        )
    order = np.argsort(result.model.centers, kind="stable")
    centers = result.model.centers[order]
    lo, a, b, hi = (int(k) for k in order)

    outer_mid = 0.5 * (centers[0] + centers[3])
    inner_mid = 0.5 * (centers[1] + centers[2])
    sigma_outer = _midpoint_sigma(result, lo, hi)
    sigma_inner = _midpoint_sigma(result, a, b)

    combined = math.hypot(sigma_outer, sigma_inner)
    tolerance = max(3.0 * combined, 1e-9 * abs(outer_mid))
    warning = None
    if abs(inner_mid - outer_mid) > tolerance:
        warning = (
            f"inner-pair midpoint {inner_mid:.6f} Hz differs from outer-pair "
            f"midpoint {outer_mid:.6f} Hz by more than 3 sigma ({combined:.3g} Hz)"
        )
        logger.warning(warning)

    return DExtraction(
        D=float(outer_mid),
        sigma_D=sigma_outer,
        mode=ZEEMAN,
        E_or_Bsplit=float(0.5 * (centers[3] - centers[0])),
        asymmetry_warning=warning,
    )


def extract_D_zfs(result):
    """D and E from a converged 2-peak fit of the zero-field double dip."""
    _require_converged(result)
    n = result.model.n_peaks
    if n != 2:
        raise InsufficientPeaksError(
            f"zero-field extraction needs exactly 2 dips, fit has {n}"
        )
    c1, c2 = sorted(result.model.centers)
    return DExtraction(
        D=float(0.5 * (c1 + c2)),
        sigma_D=_midpoint_sigma(result, 0, 1),
        mode=ZERO_FIELD,
        E_or_Bsplit=float(0.5 * (c2 - c1)),
    )


def fit_DT(records, T0=REFERENCE_TEMPERATURE_K):
    """
    Weighted linear fit D = intercept + slope * (T - T0).

    Weights are 1/sigma_D^2, or uniform when any sigma_D is zero. The slope
    is signed (Hz/K).
    """
    records = list(records)
    if len(records) < MIN_RECORDS:
        raise InsufficientDataError(
            f"D-T calibration needs at least {MIN_RECORDS} records, got {len(records)}"
        )
    T = np.array([r.T_ref for r in records], dtype=float)
    D = np.array([r.extraction.D for r in records], dtype=float)
    sigma = np.array([r.extraction.sigma_D for r in records], dtype=float)

    span = float(T.max() - T.min())
    if span == 0.0:
        raise DegenerateCalibrationError("all records share one temperature")
    if span < MIN_SPAN_K:
        raise InsufficientDataError(
            f"records span {span:.3g} K; at least {MIN_SPAN_K:g} K required"
        )

    weights = np.ones_like(D) if np.any(sigma == 0) else 1.0 / sigma**2
    x = T - T0
    design = np.column_stack([np.ones_like(x), x])
    root_w = np.sqrt(weights)
    coef, _, rank, _ = np.linalg.lstsq(design * root_w[:, None], D * root_w, rcond=None)
    if rank < 2:
        raise DegenerateCalibrationError("D-T design matrix is rank deficient")
    intercept, slope = (float(c) for c in coef)

    residuals = D - (intercept + slope * x)
    dof = len(records) - 2
    residual_std = math.sqrt(float(residuals @ residuals) / dof) if dof > 0 else 0.0

    normal = design.T @ (design * weights[:, None])
    cov = np.linalg.inv(normal)
    if np.any(sigma == 0) and dof > 0:
        cov = cov * residual_std**2
    return CalibrationFit(
        slope=slope,
        intercept=intercept,
        residual_std=residual_std,
        residuals=tuple(float(r) for r in residuals),
        T0=float(T0),
        slope_sigma=math.sqrt(max(float(cov[1, 1]), 0.0)),
        intercept_sigma=math.sqrt(max(float(cov[0, 0]), 0.0)),
        temperatures=tuple(float(t) for t in T),
    )


def D_at(cal, T):
    """Calibrated D at temperature T."""
    return cal.intercept + cal.slope * (T - cal.T0)


def temperature_from_D(D, cal, sigma_D=0.0):
    """Invert the calibration: T = T0 + (D - intercept) / slope."""
    if cal.slope == 0.0:
        raise NonInvertibleError("calibration slope is zero")
    return TemperatureEstimate(
        kelvin=cal.T0 + (D - cal.intercept) / cal.slope,
        uncertainty=sigma_D / abs(cal.slope),
    )


def repeatability_std(Ds):
    """Sample standard deviation (n-1) of repeated D values."""
    values = np.asarray(list(Ds), dtype=float)
    if values.size < 2:
        raise InsufficientDataError("repeatability needs at least 2 values")
    return float(np.std(values, ddof=1))


def compare_slopes(cal_a, cal_b):
    """| |slope_a| - |slope_b| | in Hz/K."""
    return abs(abs(cal_a.slope) - abs(cal_b.slope))

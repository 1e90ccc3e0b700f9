"""
Cumulative Lorentzian Fitting

Fits a baseline minus N Lorentzian dips to an ODMR spectrum by damped
least squares (Levenberg-Marquardt with Marquardt diagonal scaling) using the
analytic Jacobian of the model. Initial guesses come from prominence-based
peak detection on a smoothed copy of the signal.

Internally frequencies are mapped onto u = (f - f0) / w with f0 the grid
midpoint and w the half span, so center and width parameters are O(1).
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks, peak_widths

from errors import DegenerateFitError, InsufficientGuessesError
from lineshape import LorentzianPeak

logger = logging.getLogger(__name__)

PARAMETERS_PER_PEAK = 3

MAX_ITERATIONS = 200
INITIAL_DAMPING = 1e-3
DAMPING_FACTOR = 10.0
MAX_DAMPING = 1e16
RSS_TOLERANCE = 1e-10
STEP_TOLERANCE = 1e-8
REFINE_STEPS = 8
REFINE_TOLERANCE = 1e-13
REFINE_FLOOR = 1e-3  # normalized units, for parameters near zero
SINGULAR_TOLERANCE = 1e-9

CONTRAST_FLOOR = 1e-12
WIDTH_FLOOR = 1e-9  # in units of the half span

SMOOTH_WINDOW = 5


@dataclass(frozen=True)
class FitModel:
    baseline: float
    peaks: Tuple[LorentzianPeak, ...]

    def __post_init__(self):
        object.__setattr__(self, "peaks", tuple(self.peaks))

    @property
    def n_peaks(self):
        return len(self.peaks)

    @property
    def centers(self):
        return np.array([peak.center for peak in self.peaks])

    def to_vector(self):
        values = [self.baseline]
        for peak in self.peaks:
            values.extend([peak.center, peak.fwhm, peak.contrast])
        return np.array(values, dtype=float)

    @classmethod
    def from_vector(cls, vector):
        vector = np.asarray(vector, dtype=float)
        if (len(vector) - 1) % PARAMETERS_PER_PEAK != 0:
            raise ValueError(f"parameter vector length {len(vector)} is not 1 + 3n")
        rows = vector[1:].reshape(-1, PARAMETERS_PER_PEAK)
        peaks = tuple(LorentzianPeak(float(c), float(w), float(a)) for c, w, a in rows)
        return cls(float(vector[0]), peaks)

    def parameter_names(self):
        return parameter_names(self.n_peaks)


def parameter_names(n_peaks):
    names = ["baseline"]
    for k in range(1, n_peaks + 1):
        names.extend([f"center_{k}", f"fwhm_{k}", f"contrast_{k}"])
    return names


@dataclass(frozen=True, eq=False)
class FitResult:
    model: FitModel
    covariance: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    initial_residual_norm: float = math.nan
    shared_fwhm: bool = False

    def sigma(self, index):
        return math.sqrt(max(float(self.covariance[index, index]), 0.0))

    @staticmethod
    def center_index(peak_index):
        return 1 + PARAMETERS_PER_PEAK * peak_index

    def center_sigma(self, peak_index):
        return self.sigma(self.center_index(peak_index))

    def center_covariance(self, i, j):
        return float(self.covariance[self.center_index(i), self.center_index(j)])


def model_eval(model, f):
    """baseline - sum of Lorentzian dips at f."""
    f = np.asarray(f, dtype=float)
    value = np.full(f.shape, model.baseline, dtype=float)
    for peak in model.peaks:
        value = value - peak.depth(f)
    return value if value.ndim else float(value)


def model_derivative(model, f):
    """Analytic dS/df of the model."""
    f = np.asarray(f, dtype=float)
    slope = np.zeros(f.shape, dtype=float)
    for peak in model.peaks:
        h2 = (0.5 * peak.fwhm) ** 2
        d = f - peak.center
        q = d * d + h2
        slope = slope + peak.contrast * h2 * 2.0 * d / (q * q)
    return slope if slope.ndim else float(slope)


def estimate_noise(signal):
    """Robust white-noise sigma from first differences (MAD)."""
    d = np.diff(np.asarray(signal, dtype=float))
    if d.size == 0:
        return 0.0
    mad = float(np.median(np.abs(d - np.median(d))))
    return 1.4826 * mad / math.sqrt(2.0)


def estimate_baseline(spectrum):
    return float(np.percentile(spectrum.signal, 75))


def detect_peaks(spectrum, min_prominence=None, smooth_window=SMOOTH_WINDOW):
    """
    Dip candidates ordered by center frequency.

    Local minima of a moving-average-smoothed signal with prominence of at
    least min_prominence. The FWHM guess is the width at half prominence and
    the contrast guess the prominence itself. Of two candidates closer than a
    quarter FWHM only the deeper one is kept.
    """
    signal = spectrum.signal
    if len(signal) < 3:
        return []
    window = max(1, min(smooth_window, len(signal)))
    smoothed = uniform_filter1d(signal, size=window, mode="nearest") if window > 1 else signal
    if min_prominence is None:
        min_prominence = max(4.0 * estimate_noise(signal), 1e-4)

    inverted = -smoothed
    index, props = find_peaks(inverted, prominence=min_prominence)
    if index.size == 0:
        return []

    prominences = props["prominences"]
    _, _, left_ips, right_ips = peak_widths(
        inverted,
        index,
        rel_height=0.5,
        prominence_data=(prominences, props["left_bases"], props["right_bases"]),
    )
    grid = np.arange(len(signal), dtype=float)
    f_left = np.interp(left_ips, grid, spectrum.freqs)
    f_right = np.interp(right_ips, grid, spectrum.freqs)
    step = spectrum.step

    candidates = []
    for k in np.argsort(-prominences, kind="stable"):
        center = float(spectrum.freqs[index[k]])
        fwhm = max(float(f_right[k] - f_left[k]), step)
        if any(abs(center - kept.center) < 0.25 * kept.fwhm for _, kept in candidates):
            continue
        contrast = min(max(float(prominences[k]), 1e-6), 0.999)
        candidates.append((float(prominences[k]), LorentzianPeak(center, fwhm, contrast)))

    return sorted((peak for _, peak in candidates), key=lambda peak: peak.center)


def strongest(guesses, n):
    """The n deepest guesses, returned in center order."""
    deepest = sorted(guesses, key=lambda peak: -peak.contrast)[:n]
    return sorted(deepest, key=lambda peak: peak.center)


def split_guess(peak, n):
    """
    n guesses for an unresolved multiplet seen as a single dip.

    Centers are spread over +- fwhm/4 with narrower widths and the depth
    shared between components.
    """
    if n <= 1:
        return [peak]
    offsets = np.linspace(-0.25, 0.25, n) * peak.fwhm
    contrast = min(1.2 * peak.contrast / n, 0.999)
    return [LorentzianPeak(peak.center + o, 0.75 * peak.fwhm, contrast) for o in offsets]


def _tie_matrix(n_peaks, shared_fwhm):
    size = 1 + PARAMETERS_PER_PEAK * n_peaks
    if not shared_fwhm:
        return np.eye(size)
    tie = np.zeros((size, 2 + 2 * n_peaks))
    tie[0, 0] = 1.0
    for k in range(n_peaks):
        tie[1 + 3 * k, 1 + 2 * k] = 1.0
        tie[3 + 3 * k, 2 + 2 * k] = 1.0
        tie[2 + 3 * k, -1] = 1.0
    return tie


def _free_names(n_peaks, shared_fwhm):
    if not shared_fwhm:
        return parameter_names(n_peaks)
    names = ["baseline"]
    for k in range(1, n_peaks + 1):
        names.extend([f"center_{k}", f"contrast_{k}"])
    names.append("fwhm")
    return names


def _evaluate(theta, u, n_peaks):
    """Model values and Jacobian (N x (1+3n)) in normalized units."""
    values = np.full(u.shape, theta[0])
    jac = np.empty((u.size, 1 + PARAMETERS_PER_PEAK * n_peaks))
    jac[:, 0] = 1.0
    rows = theta[1:].reshape(n_peaks, PARAMETERS_PER_PEAK)
    for k, (center, width, contrast) in enumerate(rows):
        h = 0.5 * width
        d = u - center
        q = d * d + h * h
        shape = h * h / q
        q2 = q * q
        values -= contrast * shape
        jac[:, 1 + 3 * k] = -contrast * 2.0 * h * h * d / q2
        jac[:, 2 + 3 * k] = -contrast * h * d * d / q2
        jac[:, 3 + 3 * k] = -shape
    return values, jac


class _Bounds:
    def __init__(self, u):
        self.lo = float(u[0])
        self.hi = float(u[-1])

    def project(self, theta):
        theta = theta.copy()
        rows = theta[1:].reshape(-1, PARAMETERS_PER_PEAK)
        rows[:, 0] = np.clip(rows[:, 0], self.lo, self.hi)
        rows[:, 1] = np.maximum(rows[:, 1], WIDTH_FLOOR)
        rows[:, 2] = np.clip(rows[:, 2], CONTRAST_FLOOR, 1.0 - CONTRAST_FLOOR)
        return theta


def _initial_model(spectrum, n_peaks, init, min_prominence):
    if isinstance(init, FitModel):
        guesses, baseline = list(init.peaks), init.baseline
    elif init is not None:
        guesses, baseline = list(init), estimate_baseline(spectrum)
    else:
        guesses = detect_peaks(spectrum, min_prominence)
        if len(guesses) < n_peaks:
            raise InsufficientGuessesError(
                f"peak detection found {len(guesses)} dips, {n_peaks} requested"
            )
        guesses = strongest(guesses, n_peaks)
        baseline = estimate_baseline(spectrum)
    if len(guesses) != n_peaks:
        raise ValueError(f"{len(guesses)} initial peaks given for an {n_peaks}-peak fit")
    return FitModel(baseline, guesses)


def _check_rank(jac_free, names):
    norms = np.linalg.norm(jac_free, axis=0)
    dead = [names[i] for i in np.flatnonzero(norms == 0)]
    if dead:
        raise DegenerateFitError(dead)
    scaled = jac_free / norms
    _, singular, vt = np.linalg.svd(scaled, full_matrices=False)
    if singular[-1] < SINGULAR_TOLERANCE * singular[0]:
        direction = np.abs(vt[-1])
        involved = [names[i] for i in np.flatnonzero(direction > 0.2 * direction.max())]
        raise DegenerateFitError(involved)
    return norms, singular, vt


def _refine(state, tie, evaluate, steps=REFINE_STEPS):
    """
    Undamped Gauss-Newton steps from a converged point, kept while they
    strictly lower the residual.
    """
    free, jac, residual, rss = state
    for _ in range(steps):
        jac_free = jac @ tie
        norms = np.linalg.norm(jac_free, axis=0)
        norms[norms == 0] = 1.0
        scaled_step, *_ = np.linalg.lstsq(jac_free / norms, residual, rcond=None)
        trial = evaluate(free + scaled_step / norms)
        if not trial[3] < rss:
            break
        moved = np.abs(trial[0] - free)
        free, jac, residual, rss = trial
        if np.all(moved <= REFINE_TOLERANCE * (np.abs(free) + REFINE_FLOOR)):
            break
    return free, jac, residual, rss


def fit(
    spectrum,
    n_peaks,
    init=None,
    *,
    shared_fwhm=False,
    min_prominence=None,
    max_iterations=MAX_ITERATIONS,
):
    """
    Least-squares fit of a baseline and n_peaks Lorentzian dips.

    init may be a FitModel, a sequence of LorentzianPeak guesses, or None to
    use detect_peaks. Returns a FitResult; a run that exhausts
    max_iterations is returned with converged=False.
    """
    if n_peaks < 1:
        raise ValueError("n_peaks must be at least 1")
    start = _initial_model(spectrum, n_peaks, init, min_prominence)
    if shared_fwhm:
        width = float(np.mean([peak.fwhm for peak in start.peaks]))
        start = FitModel(
            start.baseline,
            [LorentzianPeak(p.center, width, p.contrast) for p in start.peaks],
        )

    freqs = spectrum.freqs
    y = spectrum.signal
    f0 = 0.5 * (freqs[0] + freqs[-1])
    half_span = 0.5 * (freqs[-1] - freqs[0])
    u = (freqs - f0) / half_span
    unit = np.ones(1 + PARAMETERS_PER_PEAK * n_peaks)
    unit[1:] = np.tile([half_span, half_span, 1.0], n_peaks)
    offset = np.zeros_like(unit)
    offset[1::PARAMETERS_PER_PEAK] = f0

    tie = _tie_matrix(n_peaks, shared_fwhm)
    untie = np.linalg.pinv(tie)
    names = _free_names(n_peaks, shared_fwhm)
    bounds = _Bounds(u)

    theta = bounds.project((start.to_vector() - offset) / unit)

    def evaluate(candidate):
        """(free, jac, residual, rss) at a candidate, projected onto the bounds."""
        projected = untie @ bounds.project(tie @ candidate)
        values, jac = _evaluate(tie @ projected, u, n_peaks)
        residual = y - values
        return projected, jac, residual, float(residual @ residual)

    free, jac, residual, rss = evaluate(untie @ theta)
    initial_rss = rss

    damping = INITIAL_DAMPING
    converged = rss == 0.0
    iterations = 0
    while not converged and iterations < max_iterations:
        iterations += 1
        jac_free = jac @ tie
        normal = jac_free.T @ jac_free
        gradient = jac_free.T @ residual
        scale = np.sqrt(np.diag(normal))
        scale[scale == 0] = 1.0
        scaled_normal = normal / np.outer(scale, scale)
        scaled_gradient = gradient / scale

        trial = None
        while damping <= MAX_DAMPING:
            system = scaled_normal + damping * np.diag(np.diag(scaled_normal))
            try:
                step = np.linalg.solve(system, scaled_gradient) / scale
            except np.linalg.LinAlgError:
                damping *= DAMPING_FACTOR
                continue
            candidate = evaluate(free + step)
            if np.isfinite(candidate[3]) and candidate[3] <= rss:
                trial = candidate
                break
            damping *= DAMPING_FACTOR

        if trial is None:
            # no downhill step at any damping: stationary point
            converged = True
            break

        decrease = rss - trial[3]
        moved = float(np.linalg.norm(trial[0] - free))
        size = float(np.linalg.norm(trial[0]))
        previous_rss = rss
        free, jac, residual, rss = trial
        damping = max(damping / DAMPING_FACTOR, 1e-12)
        logger.debug("iteration %d rss=%.6g damping=%.1e", iterations, rss, damping)

        if (
            rss == 0.0
            or decrease <= RSS_TOLERANCE * previous_rss
            or moved <= STEP_TOLERANCE * (size + STEP_TOLERANCE)
        ):
            converged = True

    if converged:
        free, jac, residual, rss = _refine((free, jac, residual, rss), tie, evaluate)
    else:
        logger.warning(
            "fit of %d peaks did not converge in %d iterations", n_peaks, max_iterations
        )

    jac_free = jac @ tie
    norms, singular, vt = _check_rank(jac_free, names)
    dof = max(len(y) - len(free), 1)
    variance = rss / dof
    cov_scaled = (vt.T / singular**2) @ vt
    cov_free = variance * cov_scaled / np.outer(norms, norms)
    cov_theta = tie @ cov_free @ tie.T
    covariance = cov_theta * np.outer(unit, unit)
    covariance = 0.5 * (covariance + covariance.T)

    model = FitModel.from_vector(tie @ free * unit + offset)
    return FitResult(
        model=model,
        covariance=covariance,
        residual_norm=math.sqrt(rss),
        iterations=iterations,
        converged=converged,
        initial_residual_norm=math.sqrt(initial_rss),
        shared_fwhm=shared_fwhm,
    )


def fit_curve(result: FitResult, freqs: Sequence[float]):
    """Fitted model evaluated on a grid (for plot output)."""
    return model_eval(result.model, np.asarray(freqs, dtype=float))

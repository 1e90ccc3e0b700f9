import numpy as np
import pytest

from errors import DegenerateFitError, InsufficientGuessesError
from fitting import (
    FitModel,
    _check_rank,
    detect_peaks,
    fit,
    fit_curve,
    model_derivative,
    model_eval,
    parameter_names,
    split_guess,
    strongest,
)
from lineshape import LorentzianPeak, Spectrum, make_grid, synthesize, zeeman_spectrum, zero_field_spectrum
from spin_model import GAMMA_E_HZ_PER_T, SpinParams, field_along_axis

D0 = 2.87e9
E0 = 5e6
BIAS = 5e-3


def _zeeman_centers():
    shift = GAMMA_E_HZ_PER_T * BIAS
    return np.array([D0 - shift, D0 - shift / 3, D0 + shift / 3, D0 + shift])


def _zeeman(noise_sigma=0.0, seed=0):
    params = SpinParams(D=D0, B=field_along_axis(BIAS, 1))
    return zeeman_spectrum(params, fwhm=9e6, per_axis_contrast=0.02, noise_sigma=noise_sigma, seed=seed)


def _grid_search_oracle(spectrum, start, half_widths, levels=45, points=5, shrink=0.7):
    """Shrinking-box grid search over (c1, c2, fwhm, contrast) with a unit baseline."""
    f = spectrum.freqs
    y = spectrum.signal
    x = np.array(start, dtype=float)
    h = np.array(half_widths, dtype=float)
    offsets = np.linspace(-1.0, 1.0, points)
    for _ in range(levels):
        grids = np.meshgrid(*[x[i] + h[i] * offsets for i in range(4)], indexing="ij")
        c1, c2, w, a = (g.reshape(-1, 1) for g in grids)
        hw2 = (0.5 * w) ** 2
        model = 1.0 - a * hw2 / ((f - c1) ** 2 + hw2) - a * hw2 / ((f - c2) ** 2 + hw2)
        rss = np.sum((y - model) ** 2, axis=1)
        best = int(np.argmin(rss))
        x = np.array([c1[best, 0], c2[best, 0], w[best, 0], a[best, 0]])
        h = h * shrink
    return x


def test_detect_peaks_finds_zeeman_dips():
    spectrum = _zeeman()
    guesses = detect_peaks(spectrum)
    assert len(guesses) == 4
    for guess, center in zip(guesses, _zeeman_centers()):
        assert abs(guess.center - center) <= 2 * spectrum.step


def test_detect_peaks_single_dip_and_flat_signal():
    freqs = make_grid(D0)
    single = synthesize([LorentzianPeak(D0 + 1e6, 9e6, 0.02)], freqs)
    guesses = detect_peaks(single)
    assert len(guesses) == 1
    assert abs(guesses[0].center - (D0 + 1e6)) <= single.step
    assert detect_peaks(Spectrum(freqs, np.ones_like(freqs))) == []


def test_detect_peaks_keeps_deeper_of_close_candidates():
    freqs = make_grid(D0, 50e6, 2001)
    spectrum = synthesize(
        [LorentzianPeak(D0, 20e6, 0.02), LorentzianPeak(D0 + 2e6, 0.2e6, 0.004)], freqs
    )
    guesses = detect_peaks(spectrum, min_prominence=1e-4)
    assert len(guesses) == 1
    assert guesses[0].contrast > 0.01


def test_strongest_and_split_guess():
    peaks = [LorentzianPeak(D0 + k * 1e7, 9e6, 0.01 * (k + 1)) for k in range(5)]
    chosen = strongest(peaks, 2)
    assert [p.center for p in chosen] == [D0 + 3e7, D0 + 4e7]
    parts = split_guess(LorentzianPeak(D0, 24e6, 0.02), 2)
    assert len(parts) == 2
    assert parts[0].center < D0 < parts[1].center
    assert parts[0].center + parts[1].center == pytest.approx(2 * D0)


def test_noiseless_zeeman_fit_recovers_centers():
    result = fit(_zeeman(), 4)
    assert result.converged
    np.testing.assert_allclose(result.model.centers, _zeeman_centers(), atol=1e3)
    for peak in result.model.peaks:
        assert peak.fwhm == pytest.approx(9e6, rel=1e-4)
    assert result.model.baseline == pytest.approx(1.0, abs=1e-6)


def test_exact_init_is_a_fixed_point():
    freqs = make_grid(D0)
    truth = LorentzianPeak(D0 + 3e6, 9e6, 0.02)
    spectrum = synthesize([truth], freqs)
    result = fit(spectrum, 1, init=FitModel(1.0, [truth]))
    assert result.converged
    peak = result.model.peaks[0]
    assert peak.center == pytest.approx(truth.center, rel=1e-6)
    assert peak.fwhm == pytest.approx(truth.fwhm, rel=1e-6)
    assert peak.contrast == pytest.approx(truth.contrast, rel=1e-6)


def test_refit_from_fitted_parameters_reproduces_them():
    spectrum = _zeeman(noise_sigma=1e-3, seed=5)
    first = fit(spectrum, 4)
    second = fit(spectrum, 4, init=first.model)
    assert first.converged and second.converged
    np.testing.assert_allclose(second.model.to_vector(), first.model.to_vector(), rtol=1e-10)


def test_overlapped_zero_field_pair_matches_grid_search():
    spectrum = zero_field_spectrum(SpinParams(D=D0, E=E0), fwhm=21e6, contrast=0.01)
    guesses = detect_peaks(spectrum)
    assert len(guesses) == 1
    result = fit(spectrum, 2, init=split_guess(guesses[0], 2))
    assert result.converged
    centers = np.sort(result.model.centers)
    np.testing.assert_allclose(centers, [D0 - E0, D0 + E0], atol=10e3)

    oracle = _grid_search_oracle(
        spectrum, start=[D0 - 7e6, D0 + 7e6, 18e6, 0.012], half_widths=[4e6, 4e6, 6e6, 0.005]
    )
    np.testing.assert_allclose(centers, oracle[:2], atol=10e3)


def test_shift_equivariance():
    spectrum = _zeeman(noise_sigma=1e-3, seed=9)
    delta = 1.25e6
    base = fit(spectrum, 4)
    moved = fit(spectrum.shifted(delta), 4)
    np.testing.assert_allclose(moved.model.centers, base.model.centers + delta, rtol=1e-9)
    for a, b in zip(base.model.peaks, moved.model.peaks):
        assert b.fwhm == pytest.approx(a.fwhm, rel=1e-6)
        assert b.contrast == pytest.approx(a.contrast, rel=1e-6)


def test_contrast_scales_with_signal_deviation():
    spectrum = _zeeman(noise_sigma=1e-3, seed=2)
    base = fit(spectrum, 4)
    scaled = Spectrum(spectrum.freqs, 1.0 + 2.0 * (spectrum.signal - 1.0))
    init = FitModel(
        1.0 + 2.0 * (base.model.baseline - 1.0),
        [LorentzianPeak(p.center, p.fwhm, 2 * p.contrast) for p in base.model.peaks],
    )
    doubled = fit(scaled, 4, init=init)
    for a, b in zip(base.model.peaks, doubled.model.peaks):
        assert b.contrast == pytest.approx(2 * a.contrast, rel=1e-5)


def test_covariance_is_symmetric_psd():
    result = fit(_zeeman(noise_sigma=1e-3, seed=1), 4)
    cov = result.covariance
    assert cov.shape == (13, 13)
    np.testing.assert_allclose(cov, cov.T, atol=0)
    scale = np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
    assert np.min(np.linalg.eigvalsh(cov / scale)) > -1e-9
    assert result.residual_norm >= 0
    assert result.residual_norm <= result.initial_residual_norm


def test_shared_fwhm_ties_widths():
    result = fit(_zeeman(noise_sigma=1e-3, seed=4), 4, shared_fwhm=True)
    widths = [p.fwhm for p in result.model.peaks]
    assert max(widths) - min(widths) == pytest.approx(0.0, abs=1e-6)
    assert widths[0] == pytest.approx(9e6, rel=0.05)
    assert result.sigma(2) == pytest.approx(result.sigma(5))


def test_center_uncertainty_matches_monte_carlo_scatter():
    freqs = make_grid(D0)
    truth = LorentzianPeak(D0, 9e6, 0.02)
    centers, predicted = [], []
    for seed in range(200):
        result = fit(synthesize([truth], freqs, noise_sigma=1e-3, seed=seed), 1)
        centers.append(result.model.peaks[0].center)
        predicted.append(result.center_sigma(0))
    ratio = np.std(centers, ddof=1) / np.mean(predicted)
    assert 1 / 1.5 < ratio < 1.5


def test_no_dips_means_no_guesses():
    freqs = make_grid(D0)
    with pytest.raises(InsufficientGuessesError):
        fit(Spectrum(freqs, np.ones_like(freqs)), 2)


def test_rank_check_names_collinear_parameters():
    jac = np.random.default_rng(0).normal(size=(50, 4))
    jac[:, 3] = 2.0 * jac[:, 1]
    with pytest.raises(DegenerateFitError) as excinfo:
        _check_rank(jac, parameter_names(1))
    assert set(excinfo.value.parameters) == {"center_1", "contrast_1"}

    jac[:, 3] = 0.0
    with pytest.raises(DegenerateFitError) as excinfo:
        _check_rank(jac, parameter_names(1))
    assert excinfo.value.parameters == ["contrast_1"]


def test_model_derivative_matches_finite_difference():
    model = FitModel(1.0, [LorentzianPeak(D0, 9e6, 0.02), LorentzianPeak(D0 + 2e7, 12e6, 0.01)])
    f = np.linspace(D0 - 3e7, D0 + 5e7, 17)
    h = 10.0
    numeric = (model_eval(model, f + h) - model_eval(model, f - h)) / (2 * h)
    np.testing.assert_allclose(model_derivative(model, f), numeric, rtol=1e-5, atol=1e-15)
    result = fit(_zeeman(), 4)
    np.testing.assert_array_equal(fit_curve(result, f), model_eval(result.model, f))

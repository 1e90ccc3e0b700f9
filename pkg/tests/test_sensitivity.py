import math

import numpy as np
import pytest

from errors import EmptyBandError, InvalidSegmentError, ZeroSlopeError
from fitting import FitModel
from lineshape import LorentzianPeak
from sensitivity import (
    PsdEstimate,
    ScaleFactor,
    TimeSeries,
    default_segment_len,
    noise_density_for_target,
    scale_factor,
    sensitivity_spectrum,
    synthesize_timeseries,
    welch_psd,
)

D0 = 2.87e9
DDT = 75.33e3


def _single(fwhm, contrast=0.02):
    return FitModel(1.0, [LorentzianPeak(D0, fwhm, contrast)])


def test_scale_factor_of_lorentzian_is_analytic():
    sf = scale_factor(_single(9e6), volts_per_unit=2.0)
    expected = 3 * math.sqrt(3) / 4 * 0.02 / 9e6 * 2.0
    assert sf.slope_v_per_hz == pytest.approx(expected, rel=1e-6)
    assert abs(abs(sf.park_freq - D0) - 9e6 / (2 * math.sqrt(3))) < 1e3


def test_scale_factor_is_proportional_to_contrast_over_width():
    rng = np.random.default_rng(3)
    ratios = []
    for _ in range(10):
        contrast = rng.uniform(0.005, 0.05)
        fwhm = rng.uniform(5e6, 25e6)
        ratios.append(scale_factor(_single(fwhm, contrast)).slope_v_per_hz * fwhm / contrast)
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-6)


def test_linewidth_change_ratio():
    narrow = scale_factor(_single(9e6)).slope_v_per_hz
    broad = scale_factor(_single(21e6)).slope_v_per_hz
    assert narrow / broad == pytest.approx(2.33, abs=0.01)


def test_scale_factor_window_restricts_scan():
    model = FitModel(1.0, [LorentzianPeak(D0, 9e6, 0.01), LorentzianPeak(D0 + 1e8, 9e6, 0.03)])
    sf = scale_factor(model, window=(D0 - 2.7e7, D0 + 2.7e7))
    assert abs(sf.park_freq - D0) < 1e7
    assert sf.slope_v_per_hz == pytest.approx(3 * math.sqrt(3) / 4 * 0.01 / 9e6, rel=5e-3)


def test_scale_factor_needs_a_slope():
    with pytest.raises(ZeroSlopeError):
        scale_factor(FitModel(1.0, []))


def test_white_noise_density():
    samples = np.random.default_rng(0).normal(0.0, 1.0, 2**16)
    psd = welch_psd(TimeSeries(100.0, samples), segment_len=1024)
    assert np.mean(psd.density[1:-1]) == pytest.approx(0.02, rel=0.10)
    df = psd.freqs[1] - psd.freqs[0]
    assert np.sum(psd.density) * df == pytest.approx(np.var(samples), rel=0.15)


def test_tone_power_localizes_to_its_bin():
    fs, amplitude = 100.0, 2.0
    t = np.arange(10000) / fs
    psd = welch_psd(TimeSeries(fs, amplitude * np.sin(2 * np.pi * 5.0 * t)), segment_len=1000)
    peak = int(np.argmax(psd.density))
    assert psd.freqs[peak] == pytest.approx(5.0)
    df = psd.freqs[1] - psd.freqs[0]
    power = np.sum(psd.density[peak - 5 : peak + 6]) * df
    assert power == pytest.approx(amplitude**2 / 2, rel=0.05)


def test_default_segment_length_gives_eight_segments():
    assert default_segment_len(9000) == 2000
    psd = welch_psd(TimeSeries(100.0, np.random.default_rng(1).normal(size=9000)))
    assert len(psd.freqs) == 2000 // 2 + 1


def test_invalid_segments():
    ts = TimeSeries(100.0, np.zeros(100))
    with pytest.raises(InvalidSegmentError):
        welch_psd(ts, segment_len=4)
    with pytest.raises(InvalidSegmentError):
        welch_psd(ts, segment_len=200)
    with pytest.raises(InvalidSegmentError):
        welch_psd(ts, segment_len=32, overlap=1.0)


def test_sensitivity_unit_chain():
    freqs = np.linspace(0.0, 50.0, 101)
    psd = PsdEstimate(freqs, np.full(freqs.shape, 1e-12))
    report = sensitivity_spectrum(psd, ScaleFactor(2.887e-9, D0), -DDT)
    np.testing.assert_allclose(report.eta, 4.60e-3, rtol=1e-3)
    assert report.avg_below_1hz == pytest.approx(4.60e-3, rel=1e-3)
    assert report.avg_below_10hz == pytest.approx(4.60e-3, rel=1e-3)


def test_sensitivity_rejects_empty_band_and_zero_slope():
    psd = PsdEstimate(np.linspace(20.0, 50.0, 31), np.full(31, 1e-12))
    with pytest.raises(EmptyBandError):
        sensitivity_spectrum(psd, ScaleFactor(1e-9, D0), DDT)
    with pytest.raises(ZeroSlopeError):
        sensitivity_spectrum(psd, ScaleFactor(1e-9, D0), 0.0)
    with pytest.raises(ZeroSlopeError):
        ScaleFactor(0.0, D0)


def test_narrow_line_improves_sensitivity_by_width_ratio():
    zfs_sf = scale_factor(_single(21e6, 0.01))
    zeeman_sf = scale_factor(_single(9e6, 0.01))
    density = noise_density_for_target(0.49, zfs_sf, DDT)
    ts = synthesize_timeseries(100.0, 60000, density, seed=42)
    psd = welch_psd(ts)
    zfs = sensitivity_spectrum(psd, zfs_sf, DDT)
    zeeman = sensitivity_spectrum(psd, zeeman_sf, DDT)
    assert zfs.avg_below_10hz == pytest.approx(0.49, rel=0.05)
    assert 0.19 <= zeeman.avg_below_10hz <= 0.25


def test_synthetic_flicker_noise_follows_one_over_f():
    ts = synthesize_timeseries(100.0, 2**17, 1e-6, flicker_density=1e-3, dc_level=1.0, seed=1)
    assert np.mean(ts.samples) == pytest.approx(1.0, abs=0.05)
    psd = welch_psd(ts, segment_len=8192)
    band = (psd.freqs >= 0.5) & (psd.freqs <= 2.0)
    assert np.mean(psd.density[band] * psd.freqs[band]) == pytest.approx(1e-6, rel=0.2)
    low = np.mean(psd.density[(psd.freqs > 0) & (psd.freqs < 0.1)])
    high = np.mean(psd.density[(psd.freqs > 10) & (psd.freqs < 40)])
    assert low > 10 * high


def test_timeseries_validation():
    with pytest.raises(ValueError):
        TimeSeries(100.0, [1.0])
    with pytest.raises(ValueError):
        TimeSeries(0.0, [1.0, 2.0])

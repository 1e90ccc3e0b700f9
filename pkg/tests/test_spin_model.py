import math

import numpy as np
import pytest

from errors import InvalidAxisError, InvalidMatrixError, RegimeError
from spin_model import (
    GAMMA_E_HZ_PER_T,
    NVAxisSet,
    SpinParams,
    approx_transitions,
    build_hamiltonian,
    eigenvalues3,
    exact_transitions,
    field_along_axis,
    jacobi_eigenvalues,
    projections,
    transitions_all_axes,
)

D0 = 2.87e9


def _oracle_eigenvalues(H, sweeps=100):
    """Plain cyclic Jacobi on the complex matrix with explicit 2x2 unitary rotations."""
    a = np.array(H, dtype=complex)
    n = a.shape[0]
    for _ in range(sweeps):
        off = math.sqrt(sum(abs(a[p, q]) ** 2 for p in range(n) for q in range(n) if p != q))
        if off < 1e-14 * np.linalg.norm(a):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0:
                    continue
                phase = a[p, q] / abs(a[p, q])
                theta = 0.5 * math.atan2(2 * abs(a[p, q]), (a[q, q] - a[p, p]).real)
                c, s = math.cos(theta), math.sin(theta)
                rot = np.eye(n, dtype=complex)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s * phase
                rot[q, p] = -s * np.conj(phase)
                a = rot.conj().T @ a @ rot
    return np.sort(np.diag(a).real)


def _random_params(rng):
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return SpinParams(
        D=rng.uniform(2.5e9, 3.2e9),
        E=rng.uniform(0.0, 10e6),
        B=tuple(rng.uniform(0.0, 10e-3) * direction),
    )


def _rotation(axis, angle):
    axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * k @ k


def test_axis_set_geometry():
    axes = NVAxisSet()
    assert len(axes) == 4
    for i in range(4):
        assert np.linalg.norm(axes[i]) == pytest.approx(1.0, abs=1e-12)
        for j in range(i + 1, 4):
            assert np.dot(axes[i], axes[j]) == pytest.approx(-1.0 / 3.0, abs=1e-12)
    outer = sum(np.outer(n, n) for n in axes)
    np.testing.assert_allclose(outer, 4.0 / 3.0 * np.eye(3), atol=1e-12)


def test_axis_set_rejects_bad_axes():
    with pytest.raises(InvalidAxisError):
        NVAxisSet(np.ones((3, 3)))
    with pytest.raises(InvalidAxisError):
        NVAxisSet(np.ones((4, 3)))


def test_hamiltonian_is_hermitian_with_trace_2d():
    rng = np.random.default_rng(1)
    for _ in range(20):
        params = _random_params(rng)
        H = build_hamiltonian(params, NVAxisSet()[rng.integers(4)])
        np.testing.assert_allclose(H, H.conj().T, atol=1e-9 * params.D)
        assert np.trace(H).real == pytest.approx(2 * params.D, rel=1e-9)


def test_eigenvalues_match_jacobi_oracle_for_random_params():
    rng = np.random.default_rng(2024)
    axes = NVAxisSet()
    for _ in range(1000):
        params = _random_params(rng)
        H = build_hamiltonian(params, axes[rng.integers(4)])
        levels = eigenvalues3(H)
        scale = np.max(np.abs(levels))
        np.testing.assert_allclose(levels, _oracle_eigenvalues(H), atol=1e-9 * scale)
        assert levels.sum() == pytest.approx(2 * params.D, rel=1e-9)


def test_eigenvalues_of_random_hermitian_matrices():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        H = 1e9 * (a + a.conj().T)
        expected = _oracle_eigenvalues(H)
        scale = np.max(np.abs(expected))
        np.testing.assert_allclose(eigenvalues3(H), expected, atol=1e-9 * scale)
        np.testing.assert_allclose(jacobi_eigenvalues(H), expected, atol=1e-9 * scale)


def test_degenerate_and_scalar_spectra():
    np.testing.assert_allclose(eigenvalues3(np.diag([1.0, 1.0, 2.0])), [1.0, 1.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(eigenvalues3(3.0 * np.eye(3)), [3.0, 3.0, 3.0])


def test_eigenvalues_reject_invalid_matrices():
    with pytest.raises(InvalidMatrixError):
        eigenvalues3(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    with pytest.raises(InvalidMatrixError):
        eigenvalues3(np.eye(2))
    with pytest.raises(InvalidMatrixError):
        eigenvalues3(np.diag([1.0, np.nan, 0.0]))


def test_zero_field_transitions_are_d_minus_plus_e():
    params = SpinParams(D=D0, E=5e6)
    pair = exact_transitions(params, NVAxisSet()[0])
    assert pair.f_minus == pytest.approx(D0 - 5e6, rel=1e-12)
    assert pair.f_plus == pytest.approx(D0 + 5e6, rel=1e-12)


def test_axial_field_exact_equals_first_order_up_to_regime_limit():
    axis = NVAxisSet()[0]
    limit = D0 / (2 * GAMMA_E_HZ_PER_T)
    for magnitude in np.linspace(0.0, limit, 101)[:-1]:
        params = SpinParams(D=D0, B=field_along_axis(magnitude, 1))
        exact = exact_transitions(params, axis)
        approx = approx_transitions(params, axis)
        assert exact.f_minus == pytest.approx(approx.f_minus, rel=1e-9)
        assert exact.f_plus == pytest.approx(approx.f_plus, rel=1e-9)
        assert exact.midpoint == pytest.approx(D0, rel=1e-9)
    aligned = exact_transitions(SpinParams(D=D0, B=field_along_axis(5e-3, 1)), axis)
    assert aligned.half_splitting == pytest.approx(GAMMA_E_HZ_PER_T * 5e-3, rel=1e-9)


def test_first_order_lines_for_111_field():
    B = 5e-3
    pairs = transitions_all_axes(SpinParams(D=D0, B=field_along_axis(B, 1)))
    shift = GAMMA_E_HZ_PER_T * B
    assert [p.axis_index for p in pairs] == [1, 2, 3, 4]
    assert pairs[0].half_splitting == pytest.approx(shift, rel=1e-12)
    for pair in pairs[1:]:
        assert pair.half_splitting == pytest.approx(shift / 3.0, rel=1e-12)
        assert pair.midpoint == pytest.approx(D0, rel=1e-15)
    np.testing.assert_allclose(projections(field_along_axis(B, 1)), [B, -B / 3, -B / 3, -B / 3], atol=1e-15)


def test_transverse_field_shifts_midpoint_quadratically():
    axis = NVAxisSet()[0]
    across = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    assert abs(float(across @ axis)) < 1e-15

    def shift(magnitude):
        params = SpinParams(D=D0, B=tuple(magnitude * across))
        return exact_transitions(params, axis).midpoint - D0

    shifts = [shift(b) for b in (4e-3, 2e-3, 1e-3)]
    assert all(s > 0 for s in shifts)
    for larger, smaller in zip(shifts, shifts[1:]):
        assert larger / smaller >= 3.5
        assert larger / smaller == pytest.approx(4.0, rel=0.05)


def test_off_axis_midpoint_shift_grows_with_field():
    axis = NVAxisSet()[1]

    def shift(magnitude):
        params = SpinParams(D=D0, B=field_along_axis(magnitude, 1))
        return exact_transitions(params, axis).midpoint - D0

    small, large = shift(1e-3), shift(2e-3)
    assert small > 0
    assert large / small == pytest.approx(4.0, rel=0.05)


def test_rotation_leaves_transitions_unchanged():
    rng = np.random.default_rng(11)
    axes = NVAxisSet()
    for _ in range(20):
        params = _random_params(rng)
        rotation = _rotation(rng.normal(size=3), rng.uniform(0, 2 * math.pi))
        rotated_axes = axes.rotated(rotation)
        rotated = params.with_field(rotation @ params.field_vector)
        for before, after in zip(
            transitions_all_axes(params, axes, exact=True),
            transitions_all_axes(rotated, rotated_axes, exact=True),
        ):
            assert after.f_minus == pytest.approx(before.f_minus, rel=1e-9)
            assert after.f_plus == pytest.approx(before.f_plus, rel=1e-9)


def test_strong_field_is_out_of_regime():
    params = SpinParams(D=D0, B=field_along_axis(0.06, 1))
    assert not params.in_regime
    with pytest.raises(RegimeError) as excinfo:
        exact_transitions(params, NVAxisSet()[0])
    assert excinfo.value.ratio > 0.5


def test_spin_params_validation():
    with pytest.raises(ValueError):
        SpinParams(D=-1.0)
    with pytest.raises(ValueError):
        SpinParams(D=D0, E=-1.0)
    with pytest.raises(ValueError):
        SpinParams(D=D0, B=(0.0, 0.0))

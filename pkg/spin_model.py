"""
NV Ground-State Spin Model

Builds the spin-1 ground-state Hamiltonian

    H = D Sz^2 + E (Sx^2 - Sy^2) + gamma_e B.S

in the frame of one NV axis, solves it exactly with a closed-form 3x3
eigensolver, and provides the first-order transition frequencies
f+- = D +- gamma_e B_i together with the tetrahedral axis geometry.

All frequencies are in Hz, fields in Tesla.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from errors import InvalidAxisError, InvalidMatrixError, RegimeError

logger = logging.getLogger(__name__)

# g ~ 2.0028 electron; g * mu_B / h
GAMMA_E_HZ_PER_T = 2.8024954e10

AXIS_TOLERANCE = 1e-6
HERMITIAN_TOLERANCE = 1e-9
# Below this relative discriminant the trigonometric root formula loses digits
DISCRIMINANT_FLOOR = 1e-10

_SQRT2 = math.sqrt(2.0)

# Spin-1 operators, basis |+1>, |0>, |-1>
SX = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / _SQRT2
SY = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / _SQRT2
SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)


def _standard_axes():
    axes = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
    )
    return axes / math.sqrt(3.0)


@dataclass(frozen=True, eq=False)
class NVAxisSet:
    """The four <111> NV orientations in crystal coordinates."""

    axes: np.ndarray = field(default_factory=_standard_axes)

    def __post_init__(self):
        axes = np.asarray(self.axes, dtype=float)
        if axes.shape != (4, 3):
            raise InvalidAxisError(f"expected 4 axes of length 3, got {axes.shape}")
        norms = np.linalg.norm(axes, axis=1)
        if np.any(np.abs(norms - 1.0) > AXIS_TOLERANCE):
            raise InvalidAxisError(f"axes must be unit vectors, norms={norms}")
        axes.setflags(write=False)
        object.__setattr__(self, "axes", axes)

    def __len__(self):
        return len(self.axes)

    def __getitem__(self, index):
        return self.axes[index]

    def __iter__(self):
        return iter(self.axes)

    def rotated(self, rotation):
        """Same set after applying a 3x3 rotation matrix to every axis."""
        return NVAxisSet(self.axes @ np.asarray(rotation, dtype=float).T)


@dataclass(frozen=True)
class SpinParams:
    D: float
    E: float = 0.0
    gamma_e: float = GAMMA_E_HZ_PER_T
    B: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        b = tuple(float(x) for x in self.B)
        if len(b) != 3:
            raise ValueError(f"B must be a 3-vector, got {self.B!r}")
        object.__setattr__(self, "B", b)
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if not self.E >= 0:
            raise ValueError(f"E must be non-negative, got {self.E}")
        if not self.gamma_e > 0:
            raise ValueError(f"gamma_e must be positive, got {self.gamma_e}")

    @property
    def field_vector(self):
        return np.array(self.B)

    @property
    def field_ratio(self):
        """gamma_e |B| / D; the model is valid below 0.5."""
        return self.gamma_e * float(np.linalg.norm(self.B)) / self.D

    @property
    def in_regime(self):
        return self.field_ratio < 0.5

    def with_field(self, B):
        return SpinParams(D=self.D, E=self.E, gamma_e=self.gamma_e, B=tuple(B))


@dataclass(frozen=True)
class TransitionPair:
    f_minus: float
    f_plus: float
    axis_index: int

    def __post_init__(self):
        if self.f_plus < self.f_minus:
            raise ValueError("f_plus must not be below f_minus")
        if not self.f_minus > 0:
            raise ValueError("transition frequencies must be positive")
        if not 1 <= self.axis_index <= 4:
            raise ValueError(f"axis_index must be 1..4, got {self.axis_index}")

    @property
    def midpoint(self):
        return 0.5 * (self.f_plus + self.f_minus)

    @property
    def half_splitting(self):
        return 0.5 * (self.f_plus - self.f_minus)


def _check_axis(axis):
    axis = np.asarray(axis, dtype=float)
    if axis.shape != (3,):
        raise InvalidAxisError(f"axis must be a 3-vector, got shape {axis.shape}")
    norm = float(np.linalg.norm(axis))
    if abs(norm - 1.0) > AXIS_TOLERANCE:
        raise InvalidAxisError(f"axis must be normalized, |n| = {norm:.12g}")
    return axis


def axis_projection(B, axis):
    """Signed component of B along a unit axis (Tesla)."""
    axis = _check_axis(axis)
    return float(np.dot(np.asarray(B, dtype=float), axis))


def field_along_axis(magnitude, axis_index=1, axes=None):
    """Bias field vector of the given magnitude along axis 1..4."""
    axes = NVAxisSet() if axes is None else axes
    return tuple(float(x) for x in magnitude * axes[axis_index - 1])


def build_hamiltonian(params, axis):
    """
    Ground-state Hamiltonian in the frame of one NV axis (Hz).

    S_z points along the axis. The transverse part of B fixes the local
    x direction (azimuth 0), so the E term is always written along that x.
    """
    axis = _check_axis(axis)
    B = params.field_vector
    b_par = float(np.dot(B, axis))
    b_perp = float(np.linalg.norm(B - b_par * axis))

    H = params.D * (SZ @ SZ)
    H = H + params.E * (SX @ SX - SY @ SY)
    H = H + params.gamma_e * (b_par * SZ + b_perp * SX)
    return H


def _check_hermitian(H):
    H = np.asarray(H)
    if H.shape != (3, 3):
        raise InvalidMatrixError(f"expected a 3x3 matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise InvalidMatrixError("matrix has non-finite entries")
    scale = max(float(np.max(np.abs(H))), np.finfo(float).tiny)
    asym = float(np.max(np.abs(H - H.conj().T)))
    if asym > HERMITIAN_TOLERANCE * scale:
        raise InvalidMatrixError(
            f"matrix is not Hermitian (max |H - H^dagger| = {asym:.3g})"
        )
    return 0.5 * (H + H.conj().T)


def jacobi_eigenvalues(H, tol=1e-14, max_sweeps=60):
    """
    Eigenvalues of a Hermitian matrix by cyclic Jacobi rotations.

    The complex n x n matrix is embedded as the real symmetric 2n x 2n matrix
    [[Re, -Im], [Im, Re]], whose spectrum is the original one doubled.
    """
    H = np.asarray(H, dtype=complex)
    n = H.shape[0]
    a = np.block([[H.real, -H.imag], [H.imag, H.real]]).astype(float)
    m = 2 * n
    scale = max(float(np.linalg.norm(a)), np.finfo(float).tiny)

    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.triu(a, 1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
    else:
        logger.warning("Jacobi iteration hit %d sweeps without converging", max_sweeps)

    doubled = np.sort(np.diag(a))
    return doubled[::2].copy()


def eigenvalues3(H):
    """
    Real eigenvalues of a 3x3 Hermitian matrix, ascending (Hz).

    Closed-form trigonometric solution of the characteristic cubic; falls
    back to cyclic Jacobi when two roots are close enough that the arccos
    argument is ill-conditioned.
    """
    H = _check_hermitian(H)
    q = float(np.trace(H).real) / 3.0
    shifted = H - q * np.eye(3)
    p2 = float(np.sum(np.abs(shifted) ** 2).real) / 6.0
    if p2 == 0.0:
        return np.array([q, q, q])
    p = math.sqrt(p2)
    r = float(np.linalg.det(shifted / p).real) / 2.0
    r = min(1.0, max(-1.0, r))

    if 1.0 - r * r < DISCRIMINANT_FLOOR:
        logger.debug("near-degenerate spectrum (r=%.17g), using Jacobi", r)
        return jacobi_eigenvalues(H)

    phi = math.acos(r) / 3.0
    high = q + 2.0 * p * math.cos(phi)
    low = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    mid = 3.0 * q - high - low
    return np.sort(np.array([low, mid, high]))


def _check_regime(params):
    ratio = params.field_ratio
    if ratio >= 0.5:
        raise RegimeError(ratio)


def exact_transitions(params, axis, axis_index=1):
    """Transition frequencies from the exact eigenvalues of one axis."""
    _check_regime(params)
    levels = eigenvalues3(build_hamiltonian(params, axis))
    return TransitionPair(
        f_minus=float(levels[1] - levels[0]),
        f_plus=float(levels[2] - levels[0]),
        axis_index=axis_index,
    )


def approx_transitions(params, axis, axis_index=1):
    """First-order transitions f+- = D +- gamma_e |B_i|."""
    shift = params.gamma_e * abs(axis_projection(params.B, axis))
    return TransitionPair(
        f_minus=params.D - shift, f_plus=params.D + shift, axis_index=axis_index
    )


def transitions_all_axes(params, axes=None, exact=False):
    """TransitionPair for each of the four axes, in axis order."""
    axes = NVAxisSet() if axes is None else axes
    solver = exact_transitions if exact else approx_transitions
    return [solver(params, axis, axis_index=i + 1) for i, axis in enumerate(axes)]


def projections(B, axes: Sequence = None):
    """B_i for every axis of the set."""
    axes = NVAxisSet() if axes is None else axes
    return np.array([axis_projection(B, axis) for axis in axes])

"""Mean-zero periodic scalar/vector fields on the unit torus as truncated
Fourier series.

Conventions (used verbatim by every other module):

    f(x)   = sum_k fhat(k) exp(2*pi*i*<k,x>)
    fhat(k) = integral over [0,1)^2 of f(y) exp(-2*pi*i*<k,y>) dy

so the Laplacian acts as multiplication by -4*pi^2*|k|^2.  Coefficients are
stored as an (N, N) complex array in numpy FFT layout: entry [i1, i2] is
fhat(k) with k_a the integer frequency ``fftfreq(N)*N`` at index i_a, i.e.
k_a in {-N/2, ..., N/2 - 1}.  The row k_a = -N/2 (the Nyquist row) stands
for both +-N/2 and is zeroed by every multiplier operation (derivative,
translation, Fourier multiplier) so real-valuedness and multiplier
antisymmetry stay consistent.

Fields are immutable after construction; all operations are pure and safe
to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ConfigurationError, DomainError

TWO_PI = 2.0 * np.pi

#: Oversampling factor used when estimating the sup norm on a lattice.
SUP_NORM_OVERSAMPLE = 4

#: Imaginary residue above this (relative to field scale) means a broken
#: Hermitian symmetry rather than roundoff.
_IMAG_TOL = 1e-10


def _validate_grid_size(n: int) -> None:
    if n < 4 or n % 2 != 0:
        raise ConfigurationError(f"grid size must be even and >= 4, got {n}")


def wavenumbers(n: int) -> np.ndarray:
    """Integer frequencies along one axis in FFT storage order."""
    return (np.fft.fftfreq(n) * n).astype(np.int64)


def _nyquist_mask(n: int) -> np.ndarray:
    """Boolean (N, N) mask of modes with |k_a| = N/2 on either axis."""
    k = wavenumbers(n)
    ny = k == -(n // 2)
    return ny[:, None] | ny[None, :]


def _hermitian_conjugate(modes: np.ndarray) -> np.ndarray:
    """conj(fhat(-k)) arranged on the same FFT grid."""
    n = modes.shape[0]
    idx = (-np.arange(n)) % n
    return np.conj(modes[np.ix_(idx, idx)])


@dataclass(frozen=True)
class GridSignal:
    """Real samples on the uniform N x N lattice x_j = j/N."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ConfigurationError(f"grid signal must be square, got {vals.shape}")
        _validate_grid_size(vals.shape[0])
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def grid_size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ScalarField:
    """Real periodic scalar field held as truncated Fourier coefficients."""

    modes: np.ndarray
    mean_zero_required: bool = False

    def __post_init__(self):
        m = np.asarray(self.modes, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigurationError(f"mode array must be square, got {m.shape}")
        _validate_grid_size(m.shape[0])
        scale = max(float(np.max(np.abs(m))), 1.0)
        asym = float(np.max(np.abs(m - _hermitian_conjugate(m))))
        if asym > _IMAG_TOL * scale:
            raise DomainError(
                f"mode array breaks Hermitian symmetry (asymmetry {asym:.3e}); "
                "field would not be real-valued"
            )
        # Symmetrize exactly so the invariant holds bit-for-bit downstream.
        m = 0.5 * (m + _hermitian_conjugate(m))
        if self.mean_zero_required:
            if abs(m[0, 0]) > _IMAG_TOL * scale:
                raise DomainError(
                    f"mean-zero field has fhat(0) = {m[0, 0]:.3e}"
                )
            m[0, 0] = 0.0
        m.setflags(write=False)
        object.__setattr__(self, "modes", m)

    @property
    def grid_size(self) -> int:
        return self.modes.shape[0]

    def mean(self) -> float:
        return float(self.modes[0, 0].real)

    # -- small immutable algebra used throughout the solvers ---------------

    def __add__(self, other: "ScalarField") -> "ScalarField":
        if self.grid_size != other.grid_size:
            raise ConfigurationError("grid size mismatch in field addition")
        return ScalarField(
            self.modes + other.modes,
            self.mean_zero_required and other.mean_zero_required,
        )

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        if self.grid_size != other.grid_size:
            raise ConfigurationError("grid size mismatch in field subtraction")
        return ScalarField(
            self.modes - other.modes,
            self.mean_zero_required and other.mean_zero_required,
        )

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.modes * float(c), self.mean_zero_required)

    __rmul__ = __mul__


@dataclass(frozen=True)
class VectorField:
    """Pair of scalar components on a shared grid (velocities, gradients)."""

    component1: ScalarField
    component2: ScalarField

    def __post_init__(self):
        if self.component1.grid_size != self.component2.grid_size:
            raise ConfigurationError("vector field components disagree on grid size")

    @property
    def grid_size(self) -> int:
        return self.component1.grid_size


def field_from_mode_list(
    n: int,
    entries,
    mean_zero_required: bool = True,
) -> ScalarField:
    """Build a field from (k1, k2, amplitude) entries.

    Each entry adds ``amp * exp(2*pi*i*<k,x>)`` together with its Hermitian
    partner at -k, so real fields are specified by half the spectrum, e.g.
    sin(2*pi*x1) is the single entry (1, 0, -0.5j).  Modes must be resolved:
    |k_a| < N/2.
    """
    _validate_grid_size(n)
    modes = np.zeros((n, n), dtype=np.complex128)
    for k1, k2, amp in entries:
        k1, k2 = int(k1), int(k2)
        if max(abs(k1), abs(k2)) >= n // 2:
            raise ConfigurationError(
                f"mode ({k1},{k2}) not resolved on an N={n} grid"
            )
        if mean_zero_required and k1 == 0 and k2 == 0:
            raise DomainError("mean-zero field cannot carry a k=0 mode")
        amp = complex(amp)
        modes[k1 % n, k2 % n] += amp
        modes[(-k1) % n, (-k2) % n] += np.conj(amp)
    return ScalarField(modes, mean_zero_required)


# ---------------------------------------------------------------------------
# transforms


def forward_transform(g: GridSignal) -> ScalarField:
    """Discrete analysis transform: fhat(k) = (1/N^2) sum_j g(x_j) e^{-2 pi i <k,x_j>}."""
    n = g.grid_size
    modes = np.fft.fft2(g.values) / (n * n)
    return ScalarField(modes)


def inverse_transform(f: ScalarField) -> GridSignal:
    """Synthesis on the N x N lattice; imaginary residue below 1e-10 is discarded."""
    n = f.grid_size
    values = np.fft.ifft2(f.modes) * (n * n)
    scale = max(float(np.max(np.abs(values))), 1.0)
    resid = float(np.max(np.abs(values.imag)))
    if resid > _IMAG_TOL * scale:
        raise DomainError(
            f"inverse transform produced imaginary residue {resid:.3e}; "
            "mode array is not a real field"
        )
    return GridSignal(values.real)


def modes_to_grid(modes: np.ndarray) -> np.ndarray:
    """Raw-array synthesis used in hot loops; caller guarantees symmetry."""
    n = modes.shape[-1]
    return np.fft.ifft2(modes).real * (n * n)


def grid_to_modes(values: np.ndarray) -> np.ndarray:
    n = values.shape[-1]
    return np.fft.fft2(values) / (n * n)


# ---------------------------------------------------------------------------
# multiplier operations


def _apply_multiplier(f: ScalarField, mult: np.ndarray, mean_zero: bool) -> ScalarField:
    out = f.modes * mult
    out[_nyquist_mask(f.grid_size)] = 0.0
    return ScalarField(out, mean_zero)


def partial_derivative(f: ScalarField, axis: int) -> ScalarField:
    """Spectral partial derivative along axis 1 or 2; Nyquist row zeroed."""
    if axis not in (1, 2):
        raise ConfigurationError(f"axis must be 1 or 2, got {axis}")
    n = f.grid_size
    k = wavenumbers(n)
    mult = TWO_PI * 1j * (k[:, None] if axis == 1 else k[None, :])
    mult = np.broadcast_to(mult, (n, n))
    # A derivative always kills the mean, so the result is mean-zero.
    return _apply_multiplier(f, mult, True)


def gradient(f: ScalarField) -> VectorField:
    return VectorField(partial_derivative(f, 1), partial_derivative(f, 2))


def translate(f: ScalarField, a) -> ScalarField:
    """Shift x -> f(x + a): multiply fhat(k) by exp(2*pi*i*<k,a>)."""
    a = np.asarray(a, dtype=np.float64) % 1.0
    n = f.grid_size
    k = wavenumbers(n)
    phase = np.exp(TWO_PI * 1j * (k[:, None] * a[0] + k[None, :] * a[1]))
    return _apply_multiplier(f, phase, f.mean_zero_required)


# ---------------------------------------------------------------------------
# norms

MAX_SOBOLEV_ORDER = 4


def _sobolev_symbol(n: int, k_order: int) -> np.ndarray:
    """sum over |alpha| <= k of (2*pi*k1)^(2a1) * (2*pi*k2)^(2a2)."""
    k = wavenumbers(n).astype(np.float64)
    s1 = (TWO_PI * k[:, None]) ** 2
    s2 = (TWO_PI * k[None, :]) ** 2
    sym = np.zeros((n, n))
    for a1, a2 in product(range(k_order + 1), repeat=2):
        if a1 + a2 <= k_order:
            sym += s1**a1 * s2**a2
    return sym


def sobolev_norm(f: ScalarField, k_order: int) -> float:
    """W^{k,2} norm computed spectrally; order 0 is the plain L^2 norm."""
    if not 0 <= k_order <= MAX_SOBOLEV_ORDER:
        raise ConfigurationError(
            f"Sobolev order must be in [0, {MAX_SOBOLEV_ORDER}], got {k_order}"
        )
    sym = _sobolev_symbol(f.grid_size, k_order)
    return float(np.sqrt(np.sum(sym * np.abs(f.modes) ** 2)))


def l2_norm(f: ScalarField) -> float:
    return float(np.sqrt(np.sum(np.abs(f.modes) ** 2)))


def embed_modes(modes: np.ndarray, factor: int) -> np.ndarray:
    """Zero-pad a mode array onto a ``factor``-times-larger grid.

    Nyquist coefficients are split half/half onto +-N/2 so the trigonometric
    interpolant through the original samples is reproduced exactly.
    """
    n = modes.shape[0]
    big_n = factor * n
    half = n // 2
    shifted = np.fft.fftshift(modes)  # rows/cols ordered k = -half .. half-1
    tmp = np.zeros((n + 1, n), dtype=np.complex128)
    tmp[0, :] = 0.5 * shifted[0, :]
    tmp[n, :] = 0.5 * shifted[0, :]
    tmp[1:n, :] = shifted[1:, :]
    ext = np.zeros((n + 1, n + 1), dtype=np.complex128)
    ext[:, 0] = 0.5 * tmp[:, 0]
    ext[:, n] = 0.5 * tmp[:, 0]
    ext[:, 1:n] = tmp[:, 1:]
    big = np.zeros((big_n, big_n), dtype=np.complex128)
    pos = np.arange(-half, half + 1) % big_n
    big[np.ix_(pos, pos)] += ext
    return big


def oversampled_values(f: ScalarField, factor: int = SUP_NORM_OVERSAMPLE) -> np.ndarray:
    """Samples on a ``factor``-times-finer lattice via zero-padded synthesis."""
    return modes_to_grid(embed_modes(f.modes, factor))


def sup_norm(f: ScalarField) -> float:
    """Lattice maximum of |f| on a 4x oversampled grid.

    This under-approximates the essential sup by at most the interpolation
    slack of the oversampled lattice; callers treating it as exact must
    keep that caveat in mind.
    """
    return float(np.max(np.abs(oversampled_values(f))))

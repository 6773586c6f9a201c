"""Velocity reconstruction from vorticity on the torus.

The operator K maps a mean-zero scalar vorticity to the unique mean-zero
divergence-free velocity field with curl(u) = omega, by solving

    Lap u1 = -d(omega)/dx2,   Lap u2 = d(omega)/dx1.

With the transform convention of :mod:`torus_field` (Lap acts as
-4*pi^2*|k|^2) the solution is the Fourier multiplier

    u1_hat(k) =  i*k2 / (2*pi*|k|^2) * omega_hat(k)
    u2_hat(k) = -i*k1 / (2*pi*|k|^2) * omega_hat(k),     k != 0.

The multipliers are fixed by residual substitution into the defining
Poisson problems, which is also what the tests check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .torus_field import (
    ScalarField,
    VectorField,
    _nyquist_mask,
    l2_norm,
    partial_derivative,
    sobolev_norm,
    _sobolev_symbol,
    wavenumbers,
)

#: Spectral gap of the torus: smallest nonzero eigenvalue of -Lap.
LAMBDA_1 = 4.0 * np.pi**2

_MEAN_TOL = 1e-12


@dataclass(frozen=True)
class BiotSavartConstants:
    """Constants entering the solver's a priori bound formulas."""

    lambda1: float
    c0: float  # elliptic constant ||K_j f||_{k,2} <= c0 ||f||_{k-1,2}

    def __post_init__(self):
        if not (self.lambda1 > 0 and np.isfinite(self.c0) and self.c0 > 0):
            raise ConfigurationError("invalid Biot-Savart constants")


def _require_mean_zero(f: ScalarField, what: str) -> None:
    if abs(f.modes[0, 0]) > _MEAN_TOL * max(1.0, float(np.max(np.abs(f.modes)))):
        raise DomainError(f"{what} must be mean-zero (fhat(0) = {f.modes[0, 0]:.3e})")


def _inv_ksq(n: int) -> np.ndarray:
    k = wavenumbers(n).astype(np.float64)
    ksq = k[:, None] ** 2 + k[None, :] ** 2
    ksq[0, 0] = np.inf  # k = 0 mode is annihilated, never divided
    return 1.0 / ksq


def green_solve(f: ScalarField) -> ScalarField:
    """Solve Lap g = -f with mean-zero data and mean-zero solution."""
    _require_mean_zero(f, "Poisson right-hand side")
    n = f.grid_size
    g = f.modes * (_inv_ksq(n) / LAMBDA_1)
    g[0, 0] = 0.0
    g[_nyquist_mask(n)] = 0.0
    return ScalarField(g, mean_zero_required=True)


def velocity_modes(omega_modes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw-array K multipliers; used by the Monte Carlo engine hot path."""
    n = omega_modes.shape[-1]
    k = wavenumbers(n).astype(np.float64)
    inv = _inv_ksq(n)
    m1 = 1j * k[None, :] * inv / (2.0 * np.pi)  # i*k2/(2*pi*|k|^2)
    m2 = -1j * k[:, None] * inv / (2.0 * np.pi)
    ny = _nyquist_mask(n)
    m1[ny] = 0.0
    m2[ny] = 0.0
    m1[0, 0] = 0.0
    m2[0, 0] = 0.0
    return omega_modes * m1, omega_modes * m2


def apply_K(omega: ScalarField) -> VectorField:
    """Velocity field of a mean-zero vorticity; divergence-free, curl = omega."""
    _require_mean_zero(omega, "vorticity")
    u1, u2 = velocity_modes(omega.modes)
    return VectorField(
        ScalarField(u1, mean_zero_required=True),
        ScalarField(u2, mean_zero_required=True),
    )


def divergence(u: VectorField) -> ScalarField:
    return partial_derivative(u.component1, 1) + partial_derivative(u.component2, 2)


def curl(u: VectorField) -> ScalarField:
    return partial_derivative(u.component2, 1) - partial_derivative(u.component1, 2)


def verify_elliptic_estimates(f: ScalarField) -> dict:
    """Check ||grad K_j f|| <= ||f|| and ||K_j f|| <= ||f||/sqrt(lambda_1).

    Returns the achieved ratios per component together with pass flags.
    """
    _require_mean_zero(f, "field")
    norm_f = l2_norm(f)
    if norm_f == 0.0:
        raise DomainError("elliptic-estimate ratios are undefined for the zero field")
    u = apply_K(f)
    grad_ratios = []
    poincare_ratios = []
    for comp in (u.component1, u.component2):
        grad_sq = l2_norm(partial_derivative(comp, 1)) ** 2 + (
            l2_norm(partial_derivative(comp, 2)) ** 2
        )
        grad_ratios.append(float(np.sqrt(grad_sq)) / norm_f)
        poincare_ratios.append(l2_norm(comp) / norm_f)
    slack = 1.0 + 1e-12
    return {
        "grad_bound_ok": all(r <= slack for r in grad_ratios),
        "poincare_ok": all(r * np.sqrt(LAMBDA_1) <= slack for r in poincare_ratios),
        "ratios": {
            "grad": tuple(grad_ratios),
            "poincare": tuple(poincare_ratios),
        },
    }


# ---------------------------------------------------------------------------
# The elliptic constant C0 with ||K_j f||_{k,2} <= C0 ||f||_{k-1,2}


def closed_form_c0(k_order: int, n: int) -> float:
    """Supremum over resolved modes of the per-mode norm ratio.

    Both Sobolev norms are diagonal in Fourier, so the sharp constant on the
    truncated grid is max over k != 0 and components j of
    |m_j(k)| * sqrt(S_k(k)/S_{k-1}(k)) with m_j the K multiplier.
    """
    if not 1 <= k_order <= 3:
        raise ConfigurationError(f"C0 is measured for orders 1..3, got {k_order}")
    k = wavenumbers(n).astype(np.float64)
    ksq = k[:, None] ** 2 + k[None, :] ** 2
    nonzero = ksq > 0
    s_hi = _sobolev_symbol(n, k_order)
    s_lo = _sobolev_symbol(n, k_order - 1)
    best = 0.0
    for m_num in (np.abs(k[None, :]), np.abs(k[:, None])):  # |k2| for K1, |k1| for K2
        mult = np.zeros_like(ksq)
        mult[nonzero] = np.broadcast_to(m_num, ksq.shape)[nonzero] / (
            2.0 * np.pi * ksq[nonzero]
        )
        ratio = mult * np.sqrt(s_hi / s_lo)
        best = max(best, float(np.max(ratio[nonzero])))
    return best


def measure_c0(k_order: int, trials: int, n: int = 32, seed: int = 0) -> float:
    """Empirical max of ||K_j f||_{k,2} / ||f||_{k-1,2} over random trial fields."""
    if trials < 1:
        raise ConfigurationError("C0 measurement needs at least one trial")
    if not 1 <= k_order <= 3:
        raise ConfigurationError(f"C0 is measured for orders 1..3, got {k_order}")
    rng = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), 0xC0]))
    best = 0.0
    for _ in range(trials):
        raw = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        f = ScalarField(0.5 * (raw + np.conj(raw[(-np.arange(n)) % n][:, (-np.arange(n)) % n])))
        m = f.modes.copy()
        m[0, 0] = 0.0
        ny = _nyquist_mask(n)
        m[ny] = 0.0
        f = ScalarField(m, mean_zero_required=True)
        denom = sobolev_norm(f, k_order - 1)
        if denom == 0.0:
            continue
        u = apply_K(f)
        for comp in (u.component1, u.component2):
            best = max(best, sobolev_norm(comp, k_order) / denom)
    return best


def constants_for_grid(n: int, k_order: int = 1) -> BiotSavartConstants:
    """Closed-form constants used by the solver's bound formulas."""
    return BiotSavartConstants(lambda1=LAMBDA_1, c0=closed_form_c0(k_order, n))

"""Monte Carlo solver for the backward stochastic representation of the
2D vorticity equation.

The terminal-value problem

    dY = <Z, K(Y)> dt + sqrt(2*nu) <Z, dB>,    Y_T(x) = psi(x + sqrt(2*nu) B_T)

is solved by Picard iteration on deterministic field trajectories: by the
Markovian reduction Y_n(t, x) = omega_n(T - t, x + sqrt(2*nu) B_t), each
iterate is a family omega_n(tau_m, .) on the shared time grid, and one
Picard step is the linear backward solve

    omega_{n+1}(tau, z) = E[ psi(z + sqrt(2*nu) Btil_tau) * W ],
    W = exp( -int_0^tau <h, dBtil> - 1/2 int_0^tau |h|^2 dr ),
    h(r) = u_n(tau - r, z + sqrt(2*nu) Btil_r) / sqrt(2*nu),
    u_n(tau, .) = K(omega_n(tau, .)),

averaged over fresh Brownian branches (left-point evaluation throughout).

Estimator design (all exact up to a documented, configurable mode
threshold):

* common random numbers: one branch family serves every lattice point,
  every time node (node m uses the first m steps) and every Picard
  iteration, which makes iterate differences low-variance and the whole
  run deterministic;
* heat-semigroup control variate: E[psi(z + sqrt(2*nu) Btil_tau)] is known
  in closed form, so the estimator averages psi * (W - 1) on top of the
  exact heat evolution -- unbiased, and exact when h = 0;
* translations are Fourier phase multiplications, so the exponent sums are
  causal convolutions in the step index, evaluated for all nodes at once
  by FFT along the time axis on the active (above-threshold) modes of u_n
  and |u_n|^2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import brownian
from .biot_savart import closed_form_c0, velocity_modes
from .errors import ConfigurationError, DomainError, NonConvergenceError, NumericalError
from .spectral_oracle import _advection_modes
from .torus_field import (
    ScalarField,
    _nyquist_mask,
    embed_modes,
    grid_to_modes,
    gradient,
    modes_to_grid,
    sup_norm,
    wavenumbers,
)

TWO_PI = 2.0 * np.pi

#: Working-memory budget (bytes) steering the branch-chunk size.
_CHUNK_BUDGET = 3 * 10**8


# ---------------------------------------------------------------------------
# configuration and data types


@dataclass(frozen=True)
class SolverConfig:
    """Grid, path-count and physics parameters of one solver run."""

    N: int
    L: int
    M_outer: int
    M_inner: int
    nu: float
    T: float
    alpha: float | None = None  # None selects alpha from the bound formulas
    picard_tol: float = 1e-3
    picard_tol_mode: str = "absolute"  # or "noise_floor_multiple"
    max_iter: int = 8
    base_seed: int = 0
    mode_threshold_rel: float = 1e-7
    groups: int = 16

    def __post_init__(self):
        if self.N < 4 or self.N % 2 != 0:
            raise ConfigurationError("N must be even and >= 4")
        if min(self.L, self.M_outer, self.M_inner, self.max_iter) < 1:
            raise ConfigurationError("all counts must be >= 1")
        if self.nu <= 0 or self.T <= 0 or self.picard_tol <= 0:
            raise ConfigurationError("nu, T and picard_tol must be positive")
        if self.alpha is not None and self.alpha < 0:
            raise ConfigurationError("alpha must be non-negative")
        if self.picard_tol_mode not in ("absolute", "noise_floor_multiple"):
            raise ConfigurationError(f"unknown picard_tol_mode {self.picard_tol_mode!r}")
        if not 2 <= self.groups <= self.M_inner:
            raise ConfigurationError("groups must be in [2, M_inner]")

    @property
    def dt(self) -> float:
        return self.T / self.L


@dataclass(frozen=True)
class PicardIterate:
    """Deterministic vorticity fields omega_n(tau_m, .) of one Picard step.

    The tau = 0 slice is the terminal data psi (Y_n(T, .) represents the
    random terminal value through the Markovian reduction).
    """

    fields: tuple
    iteration_index: int
    alpha: float

    def __post_init__(self):
        if len(self.fields) < 2:
            raise ConfigurationError("iterate needs at least two time nodes")
        n = self.fields[0].grid_size
        if any(f.grid_size != n for f in self.fields):
            raise ConfigurationError("iterate fields disagree on grid size")

    @property
    def steps(self) -> int:
        return len(self.fields) - 1

    def mode_stack(self) -> np.ndarray:
        return np.stack([f.modes for f in self.fields])


@dataclass(frozen=True)
class BsdeSolution:
    """Converged solution pair: Y as field trajectory, Z as its gradients."""

    y: PicardIterate
    z_fields: tuple
    psi: ScalarField
    config: SolverConfig
    norms: dict
    history: tuple
    path_ensemble_meta: dict


@dataclass
class SolveStats:
    """Per-solve Monte Carlo bookkeeping (standard errors, sups, groups)."""

    se_grid: np.ndarray  # (L+1, N, N) pointwise standard error
    pooled_se: np.ndarray  # (L+1,) sqrt(mean_z variance / M)
    max_se: np.ndarray  # (L+1,) max_z standard error
    sup_lattice: np.ndarray  # (L+1,) max_z |omega| on the N lattice
    group_modes: np.ndarray  # (G, L+1, N, N) per-group mean fields (modes)
    group_counts: np.ndarray  # (G,)


# ---------------------------------------------------------------------------
# elementary operations


def terminal_value(psi: ScalarField, path: brownian.BrownianPath, nu: float) -> ScalarField:
    """xi = psi( . + sqrt(2*nu) B_T), the terminal random field along a path."""
    from .torus_field import translate

    if abs(psi.modes[0, 0]) > 1e-12 * max(1.0, float(np.max(np.abs(psi.modes)))):
        raise DomainError("terminal data psi must be mean-zero")
    if path.steps < 1:
        raise ConfigurationError("path has no steps")
    shift = brownian.scaled_displacement(path, path.steps, nu)
    return translate(psi, shift)


def girsanov_weight(h_values: np.ndarray, increments: np.ndarray, dt: float) -> float:
    """exp(-sum <h_m, dB_m> - 1/2 sum |h_m|^2 dt) with left-point h.

    Overflowing or non-finite exponents raise: a clipped weight would
    silently break the martingale property, so failure must be loud.
    """
    h = np.asarray(h_values, dtype=np.float64)
    db = np.asarray(increments, dtype=np.float64)
    if h.shape != db.shape or h.ndim != 2 or h.shape[1] != 2:
        raise ConfigurationError(f"h and increments must both be (n, 2), got {h.shape} vs {db.shape}")
    if not np.all(np.isfinite(h)):
        raise NumericalError("non-finite h in Girsanov weight")
    exponent = -float(np.sum(h * db)) - 0.5 * float(np.sum(h * h)) * dt
    weight = np.exp(exponent)
    if not np.isfinite(weight) or weight <= 0.0:
        raise NumericalError(
            "Girsanov weight overflow", diagnostics={"exponent": exponent}
        )
    return float(weight)


def extract_Z(iterate: PicardIterate) -> tuple:
    """Z at node tau is the spatial gradient of omega(tau, .); the pathwise
    process is this field translated by sqrt(2*nu) B_t."""
    return tuple(gradient(f) for f in iterate.fields)


def heat_mode_stack(psi_modes: np.ndarray, nu: float, dt: float, steps: int) -> np.ndarray:
    """Exact heat evolution exp(nu*tau*Lap) psi at every node, mode-wise."""
    n = psi_modes.shape[-1]
    k = wavenumbers(n).astype(np.float64)
    ksq = k[:, None] ** 2 + k[None, :] ** 2
    taus = np.arange(steps + 1) * dt
    return psi_modes[None, :, :] * np.exp(
        -4.0 * np.pi**2 * nu * ksq[None, :, :] * taus[:, None, None]
    )


def heat_iterate(psi: ScalarField, config: SolverConfig, alpha: float) -> PicardIterate:
    """Iterate 0: the h = 0 solve, i.e. the Markovian form of E{xi(x)|F_t}."""
    stack = heat_mode_stack(psi.modes, config.nu, config.dt, config.L)
    fields = tuple(ScalarField(m, mean_zero_required=True) for m in stack)
    return PicardIterate(fields, 0, alpha)


# ---------------------------------------------------------------------------
# the weighted (Girsanov) linear solve


def _lattice_sup(stack: np.ndarray) -> np.ndarray:
    return np.max(np.abs(modes_to_grid(stack)), axis=(-2, -1))


def _active_indices(mag: np.ndarray, threshold_rel: float):
    peak = float(mag.max(initial=0.0))
    if peak == 0.0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    i1, i2 = np.nonzero(mag > threshold_rel * peak)
    return i1, i2


def _exact_speed_sq_modes(u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Modes of |u|^2 on the doubled grid, exact for band-limited u."""
    big1 = np.stack([embed_modes(m, 2) for m in u1])
    big2 = np.stack([embed_modes(m, 2) for m in u2])
    v1 = modes_to_grid(big1)
    v2 = modes_to_grid(big2)
    return grid_to_modes(v1 * v1 + v2 * v2)


def _fold_positions(kvals1: np.ndarray, kvals2: np.ndarray, n: int):
    """Fold extended-grid wavenumbers mod N onto base-grid flat positions.

    Evaluation on the N lattice cannot distinguish k from k mod N, so
    folded scatter-addition is exact for lattice sampling.
    """
    return (kvals1 % n) * n + (kvals2 % n)


@dataclass
class _ScatterPlan:
    order: np.ndarray
    starts: np.ndarray
    targets: np.ndarray

    @classmethod
    def build(cls, flat_positions: np.ndarray):
        order = np.argsort(flat_positions, kind="stable")
        ordered = flat_positions[order]
        starts = np.flatnonzero(np.r_[True, ordered[1:] != ordered[:-1]])
        return cls(order=order, starts=starts, targets=ordered[starts])

    def accumulate(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Sum values (..., K) into unique targets; returns (targets, sums)."""
        ordered = values[..., self.order]
        return self.targets, np.add.reduceat(ordered, self.starts, axis=-1)


def _chunk_size(n_branches: int, steps: int, n: int, k_total: int) -> int:
    per_branch = 16 * (
        2 * (steps + 1) * (2 * n)  # extended phase tables
        + 2 * (steps + 1) * n  # base-grid phase tables
        + 6 * 2 * steps * max(k_total, 1)  # convolution work arrays
        + 4 * n * n  # per-node field temporaries
    )
    return int(np.clip(_CHUNK_BUDGET // max(per_branch, 1), 1, n_branches))


def solve_weighted_with_stats(
    prev: PicardIterate, config: SolverConfig
) -> tuple[PicardIterate, SolveStats]:
    """One Picard step by Girsanov-weighted branch averages; returns stats."""
    n, steps, dt, nu = config.N, config.L, config.dt, config.nu
    m_inner, n_groups = config.M_inner, config.groups
    if prev.steps != steps or prev.fields[0].grid_size != n:
        raise ConfigurationError("iterate grid does not match solver config")
    sqrt2nu = np.sqrt(2.0 * nu)

    omega = prev.mode_stack()
    omega[:, _nyquist_mask(n)] = 0.0  # multiplier-application hygiene
    psi_modes = omega[0]
    if abs(psi_modes[0, 0]) > 1e-12 * max(1.0, float(np.max(np.abs(psi_modes)))):
        raise DomainError("iterate terminal slice must be mean-zero")
    u1, u2 = velocity_modes(omega)

    # Predictable-evaluation guard: |h| sqrt(dt) must stay small or the
    # exponential moments are meaningless.
    v1 = modes_to_grid(np.stack([embed_modes(m, 2) for m in u1]))
    v2 = modes_to_grid(np.stack([embed_modes(m, 2) for m in u2]))
    max_h = float(np.max(np.hypot(v1, v2))) / sqrt2nu
    if max_h * np.sqrt(dt) > 1.0:
        raise NumericalError(
            "drift too large for the time step",
            diagnostics={"max_h": max_h, "dt": dt},
        )
    del v1, v2

    heat = heat_mode_stack(psi_modes, nu, dt, steps)

    # Active mode sets: u_n for the dB term, |u_n|^2 (doubled grid) for the
    # ds term.  Dropping relative mass below the threshold perturbs the
    # exponent by orders of magnitude less than the Monte Carlo noise.
    thr = config.mode_threshold_rel
    mag_a = (np.abs(u1[1:]) + np.abs(u2[1:])).max(axis=0)
    ia1, ia2 = _active_indices(mag_a, thr)
    k_base = wavenumbers(n)

    q_modes = _exact_speed_sq_modes(u1[1:], u2[1:]) if ia1.size else None
    if q_modes is not None:
        mag_q = np.abs(q_modes).max(axis=0)
        iq1, iq2 = _active_indices(mag_q, thr)
        k_ext = wavenumbers(2 * n)
        kq1, kq2 = k_ext[iq1], k_ext[iq2]
    else:
        iq1 = iq2 = kq1 = kq2 = np.empty(0, np.int64)

    k_a, k_q = ia1.size, iq1.size
    have_drift = k_a > 0

    # Frequency-domain coefficient tables for the causal convolutions
    # A_m = sum_{j<m} <u_{m-j}, dB_j> phase_j, Q_m = sum_{j<m} q_{m-j} phase_j.
    pad = 2 * steps
    if have_drift:
        cu1 = np.zeros((pad, k_a), dtype=np.complex128)
        cu2 = np.zeros((pad, k_a), dtype=np.complex128)
        cu1[1 : steps + 1] = u1[1:, ia1, ia2]
        cu2[1 : steps + 1] = u2[1:, ia1, ia2]
        fu1 = np.fft.fft(cu1, axis=0)
        fu2 = np.fft.fft(cu2, axis=0)
        cq = np.zeros((pad, k_q), dtype=np.complex128)
        cq[1 : steps + 1] = q_modes[:, iq1, iq2]
        fq = np.fft.fft(cq, axis=0)
        flat_a = ia1 * n + ia2
        plan_q = _ScatterPlan.build(_fold_positions(kq1, kq2, n)) if k_q else None

    db = brownian.ensemble_increments(
        config.base_seed, brownian.TAG_INNER, m_inner, steps, dt
    )
    disp = np.zeros((m_inner, steps + 1, 2))
    np.cumsum(db, axis=1, out=disp[:, 1:, :])
    disp *= sqrt2nu

    group_of = (np.arange(m_inner) * n_groups) // m_inner
    group_counts = np.bincount(group_of, minlength=n_groups)

    sum_f = np.zeros((steps + 1, n, n))
    sumsq_f = np.zeros((steps + 1, n, n))
    group_sum = np.zeros((n_groups, steps + 1, n, n))

    k_ext_all = wavenumbers(2 * n).astype(np.float64)
    base_in_ext = k_base % (2 * n)
    chunk = _chunk_size(m_inner, steps, n, k_a + k_q)

    for b0 in range(0, m_inner, chunk):
        b1 = min(b0 + chunk, m_inner)
        bc = b1 - b0
        d = disp[b0:b1]  # (bc, L+1, 2)
        px_ext = np.exp(TWO_PI * 1j * d[:, :, 0, None] * k_ext_all)
        py_ext = np.exp(TWO_PI * 1j * d[:, :, 1, None] * k_ext_all)
        px = px_ext[:, :, base_in_ext]
        py = py_ext[:, :, base_in_ext]

        if have_drift:
            ph_a = px[:, :steps, ia1] * py[:, :steps, ia2]  # (bc, L, K_A)
            xa1 = db[b0:b1, :, 0, None] * ph_a
            xa2 = db[b0:b1, :, 1, None] * ph_a
            fa = np.fft.fft(xa1, n=pad, axis=1) * fu1[None, :, :]
            fa += np.fft.fft(xa2, n=pad, axis=1) * fu2[None, :, :]
            a_nodes = np.fft.ifft(fa, axis=1)[:, 1 : steps + 1, :]
            if k_q:
                ph_q = px_ext[:, :steps, iq1] * py_ext[:, :steps, iq2]
                fqq = np.fft.fft(ph_q, n=pad, axis=1) * fq[None, :, :]
                q_nodes = np.fft.ifft(fqq, axis=1)[:, 1 : steps + 1, :]

        run_starts = np.flatnonzero(
            np.r_[True, group_of[b0 + 1 : b1] != group_of[b0 : b1 - 1]]
        )
        run_groups = group_of[b0:b1][run_starts]

        for m in range(1, steps + 1):
            if have_drift:
                em = np.zeros((bc, n * n), dtype=np.complex128)
                em[:, flat_a] = a_nodes[:, m - 1, :] / sqrt2nu
                if k_q:
                    targets, sums = plan_q.accumulate(q_nodes[:, m - 1, :])
                    em[:, targets] += sums * (dt / (4.0 * nu))
                exponent = modes_to_grid(em.reshape(bc, n, n))
                if not np.all(np.isfinite(exponent)):
                    raise NumericalError(
                        "Girsanov weight overflow in linear solve",
                        diagnostics={"node": m},
                    )
                w_minus_1 = np.expm1(-exponent)
            else:
                w_minus_1 = np.zeros((bc, n, n))
            ph_psi = px[:, m, :, None] * py[:, m, None, :]
            psi_shift = modes_to_grid(psi_modes[None, :, :] * ph_psi)
            sample = psi_shift * w_minus_1
            sum_f[m] += sample.sum(axis=0)
            sumsq_f[m] += np.square(sample).sum(axis=0)
            partial = np.add.reduceat(sample, run_starts, axis=0)
            np.add.at(group_sum, (run_groups, m), partial)

    return _assemble_iterate(
        prev, config, heat, sum_f, sumsq_f, group_sum, group_counts
    )


def _assemble_iterate(prev, config, heat, sum_f, sumsq_f, group_sum, group_counts):
    n, steps, m_inner = config.N, config.L, config.M_inner
    ny = _nyquist_mask(n)

    mc_modes = grid_to_modes(sum_f / m_inner)
    mc_modes[:, 0, 0] = 0.0  # re-project to mean zero
    mc_modes[:, ny] = 0.0
    out = heat + mc_modes
    out[0] = heat[0]  # tau = 0 slice is psi exactly

    var_z = np.maximum(sumsq_f - sum_f**2 / m_inner, 0.0) / max(m_inner - 1, 1)
    se_grid = np.sqrt(var_z / m_inner)
    se_grid[0] = 0.0
    pooled = np.sqrt(np.mean(var_z, axis=(1, 2)) / m_inner)
    pooled[0] = 0.0
    max_se = np.sqrt(var_z.max(axis=(1, 2)) / m_inner)
    max_se[0] = 0.0

    gmodes = grid_to_modes(group_sum / group_counts[:, None, None, None])
    gmodes[:, :, 0, 0] = 0.0
    gmodes[:, :, ny] = 0.0
    gmodes += heat[None]
    gmodes[:, 0] = heat[0][None]

    fields = tuple(ScalarField(m, mean_zero_required=True) for m in out)
    iterate = PicardIterate(fields, prev.iteration_index + 1, prev.alpha)
    stats = SolveStats(
        se_grid=se_grid,
        pooled_se=pooled,
        max_se=max_se,
        sup_lattice=_lattice_sup(out),
        group_modes=gmodes,
        group_counts=group_counts,
    )
    return iterate, stats


def linear_bsde_solve(prev: PicardIterate, config: SolverConfig) -> PicardIterate:
    """Public form of the weighted linear solve (stats dropped)."""
    iterate, _ = solve_weighted_with_stats(prev, config)
    return iterate


# ---------------------------------------------------------------------------
# the drifted-SDE cross-check (Girsanov equivalence)


def _bilinear(grid: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of one periodic (P, P) grid at positions (..., 2)."""
    p = grid.shape[-1]
    x = (pos[..., 0] % 1.0) * p
    y = (pos[..., 1] % 1.0) * p
    i0 = x.astype(np.int64)
    j0 = y.astype(np.int64)
    fx = x - i0
    fy = y - j0
    i0 %= p
    j0 %= p
    i1 = i0 + 1
    i1[i1 == p] = 0
    j1 = j0 + 1
    j1[j1 == p] = 0
    flat = grid.ravel()
    base0 = i0 * p
    base1 = i1 * p
    v00 = flat.take(base0 + j0)
    v10 = flat.take(base1 + j0)
    v01 = flat.take(base0 + j1)
    v11 = flat.take(base1 + j1)
    top = v00 + (v10 - v00) * fx
    bot = v01 + (v11 - v01) * fx
    return top + (bot - top) * fy


def _spectral_point_values(modes: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Exact evaluation of a field at arbitrary points via its active modes."""
    n = modes.shape[-1]
    i1, i2 = np.nonzero(modes)
    if i1.size == 0:
        return np.zeros(pos.shape[:-1])
    k = wavenumbers(n).astype(np.float64)
    phases = np.exp(
        TWO_PI * 1j * (pos[..., 0, None] * k[i1] + pos[..., 1, None] * k[i2])
    )
    return np.real(phases @ modes[i1, i2])


def solve_drifted_with_stats(
    prev: PicardIterate, config: SolverConfig
) -> tuple[PicardIterate, SolveStats]:
    """One Picard step by Euler-Maruyama on dX = -u_n dt + sqrt(2 nu) dB.

    Equivalent in law to the Girsanov-weighted solve; used as an
    independent estimator for the equivalence check.  Velocities are
    bilinearly interpolated on 4x oversampled grids; the terminal psi is
    evaluated spectrally so the heat control variate stays exactly unbiased.
    """
    n, steps, dt, nu = config.N, config.L, config.dt, config.nu
    m_paths, n_groups = config.M_inner, config.groups
    if prev.steps != steps or prev.fields[0].grid_size != n:
        raise ConfigurationError("iterate grid does not match solver config")
    sqrt2nu = np.sqrt(2.0 * nu)

    omega = prev.mode_stack()
    omega[:, _nyquist_mask(n)] = 0.0
    psi_modes = omega[0]
    u1, u2 = velocity_modes(omega)
    # Pack both components into one complex grid: a single interpolation
    # pass per step recovers the drift as (real, imag).
    u_grids = modes_to_grid(np.stack([embed_modes(m, 4) for m in u1])) + 1j * (
        modes_to_grid(np.stack([embed_modes(m, 4) for m in u2]))
    )

    heat = heat_mode_stack(psi_modes, nu, dt, steps)
    db = brownian.ensemble_increments(
        config.base_seed, brownian.TAG_DRIFT, m_paths, steps, dt
    )
    disp = np.zeros((m_paths, steps + 1, 2))
    np.cumsum(db, axis=1, out=disp[:, 1:, :])
    disp *= sqrt2nu

    grid_1d = np.arange(n) / n
    zx, zy = np.meshgrid(grid_1d, grid_1d, indexing="ij")
    lattice = np.stack([zx.ravel(), zy.ravel()], axis=-1)  # (N^2, 2)

    group_of = (np.arange(m_paths) * n_groups) // m_paths
    group_counts = np.bincount(group_of, minlength=n_groups)
    sum_f = np.zeros((steps + 1, n, n))
    sumsq_f = np.zeros((steps + 1, n, n))
    group_sum = np.zeros((n_groups, steps + 1, n, n))

    for m in range(1, steps + 1):
        pos = np.broadcast_to(lattice[None], (m_paths, n * n, 2)).copy()
        for j in range(m):
            ell = m - j  # left-point field index: time-to-go (m - j) dt
            drift = _bilinear(u_grids[ell], pos)
            pos[..., 0] += -drift.real * dt + sqrt2nu * db[:, j, 0, None]
            pos[..., 1] += -drift.imag * dt + sqrt2nu * db[:, j, 1, None]
        vals = _spectral_point_values(psi_modes, pos)
        cv_pos = lattice[None] + disp[:, m, None, :]
        cv_vals = _spectral_point_values(psi_modes, cv_pos)
        sample = (vals - cv_vals).reshape(m_paths, n, n)
        sum_f[m] = sample.sum(axis=0)
        sumsq_f[m] = np.square(sample).sum(axis=0)
        for g in range(n_groups):
            group_sum[g, m] = sample[group_of == g].sum(axis=0)

    return _assemble_iterate(
        prev, config, heat, sum_f, sumsq_f, group_sum, group_counts
    )


def drifted_sde_solve(prev: PicardIterate, config: SolverConfig) -> PicardIterate:
    iterate, _ = solve_drifted_with_stats(prev, config)
    return iterate


# ---------------------------------------------------------------------------
# weighted norms, noise floor


def y_alpha_sup(delta_stack: np.ndarray, alpha: float, dt: float) -> float:
    """Scaled weighted sup norm: max_m exp(-alpha*tau_m) * sup_z |field|.

    The weight exp(alpha*t) of the contraction norm is expressed through
    tau = T - t and normalized by exp(-alpha*T) so that values stay
    representable for large alpha; ratios and tolerance comparisons are
    invariant under the common factor.
    """
    sups = _lattice_sup(delta_stack)
    weights = np.exp(-alpha * np.arange(delta_stack.shape[0]) * dt)
    return float(np.max(weights * sups))


def grad_norm_sq_profile(stack: np.ndarray) -> np.ndarray:
    """||grad omega(tau_m)||_{L^2}^2 for every node, computed spectrally."""
    n = stack.shape[-1]
    k = wavenumbers(n).astype(np.float64)
    ksq = k[:, None] ** 2 + k[None, :] ** 2
    return np.sum(4.0 * np.pi**2 * ksq * np.abs(stack) ** 2, axis=(-2, -1))


def _prefix_quadrature(integrand: np.ndarray, dt: float) -> np.ndarray:
    """Prefix integrals by end-corrected trapezoid (Euler-Maclaurin).

    The -(dt/12)*(g'(end) - g'(0)) correction with finite-difference slopes
    removes the O(dt^2) bias that would otherwise dominate closed-form
    comparisons of smooth decaying profiles.
    """
    trap = 0.5 * (integrand[1:] + integrand[:-1]) * dt
    prefixes = np.concatenate([[0.0], np.cumsum(trap)])
    if integrand.shape[0] >= 3:
        slopes = np.diff(integrand) / dt
        corr = -(dt**2 / 12.0) * (slopes - slopes[0])
        prefixes[2:] += corr[1:]
    return prefixes


def z_alpha_bmo_sq(stack: np.ndarray, alpha: float, dt: float) -> float:
    """Scaled weighted BMO proxy (squared): max over t-windows of the
    integral of exp(-2*alpha*tau) ||grad omega(tau)||^2.

    Windows [t, T] map to tau-prefixes [0, T - t]; with non-negative
    integrands the maximum is the full integral, but every window is
    formed so the proxy matches its definition literally.
    """
    g = grad_norm_sq_profile(stack)
    w = np.exp(-2.0 * alpha * np.arange(stack.shape[0]) * dt)
    prefixes = _prefix_quadrature(w * g, dt)
    return float(np.max(prefixes))


def alpha_norm(delta_stack: np.ndarray, alpha: float, dt: float) -> float:
    """||dY^alpha||_inf + ||dZ^alpha||_BMO in the scaled convention."""
    return y_alpha_sup(delta_stack, alpha, dt) + np.sqrt(
        z_alpha_bmo_sq(delta_stack, alpha, dt)
    )


def noise_floor(stats: SolveStats, alpha: float, dt: float) -> float:
    """4x the pooled standard error of the inner estimators, alpha-weighted."""
    weights = np.exp(-alpha * np.arange(stats.pooled_se.shape[0]) * dt)
    return 4.0 * float(np.max(weights * stats.pooled_se))


# ---------------------------------------------------------------------------
# Picard iteration


def select_alpha(c0: float, c1: float, nu: float, horizon: float) -> float:
    """Smallest weight satisfying both printed contraction conditions:
    c0^2 c1^2 (nu + T c0 c1^2) / (alpha nu^2) <= 1/16 and
    c0^2 c1^2 / alpha <= nu / 4."""
    if c1 == 0.0:
        return 0.0
    a1 = 16.0 * c0**2 * c1**2 * (nu + horizon * c0 * c1**2) / nu**2
    a2 = 4.0 * c0**2 * c1**2 / nu
    return max(a1, a2)


def _group_bmo_profiles(group_modes: np.ndarray) -> np.ndarray:
    """(G, L+1) gradient-norm-squared profiles of the group mean fields."""
    return np.stack([grad_norm_sq_profile(g) for g in group_modes])


def picard_solve(psi: ScalarField, config: SolverConfig) -> BsdeSolution:
    """Fixed-point iteration of the linear backward solve.

    Starts from the exact heat-semigroup iterate, applies the weighted
    solve with common random numbers until the weighted norm of the
    iterate difference drops below tolerance, and returns the converged
    trajectory with its Monte Carlo error report.
    """
    if psi.grid_size != config.N:
        raise ConfigurationError("psi grid does not match solver config")
    if abs(psi.modes[0, 0]) > 1e-12 * max(1.0, float(np.max(np.abs(psi.modes)))):
        raise DomainError("terminal data psi must be mean-zero")
    dt = config.dt
    c1 = sup_norm(psi)
    c0 = closed_form_c0(1, config.N)
    alpha = config.alpha if config.alpha is not None else select_alpha(c0, c1, config.nu, config.T)

    current = heat_iterate(psi, config, alpha)
    if c1 == 0.0:
        return _finalize_solution(psi, config, current, None, (), c0, c1, alpha)

    prev_group_modes = None  # iterate 0 is deterministic
    history = []
    prev_delta_norm = None
    converged = False
    for _ in range(config.max_iter):
        nxt, stats = solve_weighted_with_stats(current, config)
        eps_mc = 4.0 * float(np.max(stats.max_se))
        margin = float(np.min(c1 + eps_mc - stats.sup_lattice))
        if margin < 0.0:
            raise NumericalError(
                "maximum principle violated beyond Monte Carlo allowance",
                diagnostics={"margin": margin, "iteration": nxt.iteration_index},
            )

        delta = nxt.mode_stack() - current.mode_stack()
        dy = y_alpha_sup(delta, alpha, dt)
        dz_sq = z_alpha_bmo_sq(delta, alpha, dt)
        delta_norm = dy + float(np.sqrt(dz_sq))
        floor = noise_floor(stats, alpha, dt)

        if config.picard_tol_mode == "absolute" and floor > config.picard_tol:
            raise ConfigurationError(
                f"Monte Carlo noise floor {floor:.3e} exceeds picard_tol "
                f"{config.picard_tol:.3e}; increase M_inner"
            )
        tol = (
            config.picard_tol
            if config.picard_tol_mode == "absolute"
            else config.picard_tol * floor
        )

        base_gm = (
            prev_group_modes
            if prev_group_modes is not None
            else current.mode_stack()[None]
        )
        delta_group = stats.group_modes - base_gm
        group_norms = np.array(
            [alpha_norm(g, alpha, dt) for g in delta_group]
        )
        se_delta = float(np.std(group_norms, ddof=1) / np.sqrt(config.groups))
        # Noise floor of the difference estimator itself: with common random
        # numbers the delta fields carry far less noise than the iterates,
        # which is what makes the contraction ratios measurable at all.
        delta_vals = modes_to_grid(delta_group)
        delta_se_pooled = np.sqrt(
            np.mean(np.var(delta_vals, axis=0, ddof=1), axis=(-2, -1)) / config.groups
        )
        weights = np.exp(-alpha * np.arange(config.L + 1) * dt)
        delta_floor = 4.0 * float(np.max(weights * delta_se_pooled))

        record = {
            "iteration": nxt.iteration_index,
            "delta_y_alpha": dy,
            "delta_z_alpha": float(np.sqrt(dz_sq)),
            "delta_norm": delta_norm,
            "delta_norm_se": se_delta,
            "delta_noise_floor": delta_floor,
            "noise_floor": floor,
            "eps_mc": eps_mc,
            "max_principle_margin": margin,
            "sup_lattice": stats.sup_lattice.tolist(),
            "pooled_se": stats.pooled_se.tolist(),
            "max_se": stats.max_se.tolist(),
            "tolerance": tol,
        }
        if prev_delta_norm is not None and prev_delta_norm > 0:
            record["contraction_ratio"] = delta_norm / prev_delta_norm
            record["ratio_above_noise"] = bool(
                delta_norm > delta_floor and prev_delta_norm > prev_delta_floor
            )
        history.append(record)
        prev_delta_norm = delta_norm
        prev_delta_floor = delta_floor
        prev_group_modes = stats.group_modes
        current = nxt
        if delta_norm < tol:
            converged = True
            break

    if not converged:
        raise NonConvergenceError(
            f"Picard iteration did not reach tolerance in {config.max_iter} steps",
            history=tuple(history),
        )
    return _finalize_solution(
        psi, config, current, prev_group_modes, tuple(history), c0, c1, alpha
    )


def _finalize_solution(psi, config, iterate, group_modes, history, c0, c1, alpha):
    dt = config.dt
    stack = iterate.mode_stack()
    z_fields = extract_Z(iterate)
    bmo_sq = z_alpha_bmo_sq(stack, 0.0, dt)
    if group_modes is not None:
        group_profiles = _group_bmo_profiles(group_modes)
        g = group_profiles.shape[0]
        group_bmo_sq = np.array(
            [_prefix_quadrature(p, dt)[-1] for p in group_profiles]
        )
        se_bmo_sq = float(np.std(group_bmo_sq, ddof=1) / np.sqrt(g))
        # Quadratic functionals of a mean carry an O(1/M) noise bias;
        # batch means estimate and remove it (bias of a group mean is G
        # times the bias of the full mean).
        bias = (float(np.mean(group_bmo_sq)) - bmo_sq) / (g - 1)
        bmo_sq_debiased = bmo_sq - bias
        group_bmo_list = group_bmo_sq.tolist()
    else:
        se_bmo_sq = 0.0
        bmo_sq_debiased = bmo_sq
        group_bmo_list = []
    y_sup = float(max(sup_norm(f) for f in iterate.fields))
    norms = {
        "y_sup": y_sup,
        "z_bmo_sq": bmo_sq,
        "z_bmo_sq_debiased": bmo_sq_debiased,
        "z_bmo_sq_se": se_bmo_sq,
        "z_bmo_group_values": group_bmo_list,
        "alpha": alpha,
        "c0": c0,
        "c1": c1,
    }
    meta = {
        "base_seed": config.base_seed,
        "M_inner": config.M_inner,
        "groups": config.groups,
        "inner_tag": brownian.TAG_INNER,
        "common_random_numbers": True,
    }
    return BsdeSolution(
        y=iterate,
        z_fields=z_fields,
        psi=psi,
        config=config,
        norms=norms,
        history=history,
        path_ensemble_meta=meta,
    )


# ---------------------------------------------------------------------------
# pathwise residual of the backward equation


def _phase_grid(n: int, shift: np.ndarray) -> np.ndarray:
    k = wavenumbers(n).astype(np.float64)
    return np.exp(TWO_PI * 1j * (k[:, None] * shift[0] + k[None, :] * shift[1]))


def bsde_residual_profile(solution: BsdeSolution, path: brownian.BrownianPath) -> np.ndarray:
    """L2(x) norm, per t-node, of the discrete backward-equation defect

        xi - Y(t) - sum_s <Z, K(Y)> dt - sqrt(2 nu) sum_s <Z, dB_s>

    with left-point sums, everything expressed spectrally through the
    Markovian reduction (translations are phase factors, norms Parseval).
    """
    config = solution.config
    steps, nu, dt = config.L, config.nu, config.dt
    if path.steps != steps or abs(path.dt - dt) > 1e-12 * dt:
        raise DomainError("residual path must share the solver time grid")
    n = config.N
    stack = solution.y.mode_stack()
    adv, _ = _advection_modes(stack)  # <grad omega, u>(tau) per node, dealiased
    k = wavenumbers(n).astype(np.float64)
    w1 = TWO_PI * 1j * k[:, None] * stack
    w2 = TWO_PI * 1j * k[None, :] * stack

    sqrt2nu = np.sqrt(2.0 * nu)
    disp = sqrt2nu * path.values
    xi = stack[0] * _phase_grid(n, disp[steps])

    norms = np.zeros(steps + 1)
    acc = np.zeros((n, n), dtype=np.complex128)
    for j in range(steps, -1, -1):
        ell = steps - j  # field index at BSDE time t_j
        resid = xi - stack[ell] * _phase_grid(n, disp[j]) - acc
        norms[j] = np.sqrt(np.sum(np.abs(resid) ** 2))
        if j > 0:
            ph = _phase_grid(n, disp[j - 1])
            ell_prev = steps - (j - 1)
            acc = acc + ph * (
                dt * adv[ell_prev]
                + sqrt2nu
                * (w1[ell_prev] * path.increments[j - 1, 0] + w2[ell_prev] * path.increments[j - 1, 1])
            )
    return norms


def bsde_residual(solution: BsdeSolution, path: brownian.BrownianPath) -> float:
    """Max over t-nodes of the pathwise residual norm; O(sqrt(dt)) in the step."""
    return float(np.max(bsde_residual_profile(solution, path)))


# ---------------------------------------------------------------------------
# helpers for dyadic refinement studies


def coarsen_path(path: brownian.BrownianPath, factor: int) -> brownian.BrownianPath:
    """The same Brownian path on an every-``factor``-nodes subgrid."""
    if path.steps % factor != 0:
        raise ConfigurationError("path length not divisible by coarsening factor")
    inc = path.increments.reshape(path.steps // factor, factor, 2).sum(axis=1)
    return brownian.BrownianPath(inc, path.dt * factor, path.key)


def subsample_solution(solution: BsdeSolution, factor: int) -> BsdeSolution:
    """Solution restricted to every ``factor``-th time node (exact)."""
    config = solution.config
    if config.L % factor != 0:
        raise ConfigurationError("L not divisible by subsampling factor")
    fields = solution.y.fields[::factor]
    new_config = replace(config, L=config.L // factor)
    it = PicardIterate(tuple(fields), solution.y.iteration_index, solution.y.alpha)
    return BsdeSolution(
        y=it,
        z_fields=solution.z_fields[::factor],
        psi=solution.psi,
        config=new_config,
        norms=solution.norms,
        history=solution.history,
        path_ensemble_meta=solution.path_ensemble_meta,
    )

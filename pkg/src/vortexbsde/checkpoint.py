"""Binary checkpoint formats and the on-disk solution bundle.

Field checkpoint (usually ``.vbsf``), little-endian throughout:

    bytes 0..3   magic "VBSF"
    bytes 4..5   format version, u16 (currently 1)
    bytes 6..7   grid size N, u16
    byte  8      mean_zero flag, u8
    then N*N coefficients as f64 (re, im) pairs in row-major k-order:
    entry (i1, i2) is fhat(k) with k_a = fftfreq(N)[i_a] * N, rows varying
    slowest (numpy C order of the mode array).

Trajectory checkpoint (``.vbst``): a trajectory header followed by L+1
self-contained field blocks:

    bytes 0..3   magic "VBST"
    bytes 4..5   version u16
    bytes 6..9   step count L, u32
    bytes 10..17 dt, f64
    bytes 18..25 nu, f64

A solution bundle is a directory holding ``solution.json`` (config echo,
norms, iteration history, ensemble metadata), ``psi.vbsf`` and
``y_fields.vbst``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .bsde_engine import BsdeSolution, PicardIterate, SolverConfig, extract_Z
from .errors import ConfigurationError
from .spectral_oracle import VorticityTrajectory
from .torus_field import ScalarField

FIELD_MAGIC = b"VBSF"
TRAJ_MAGIC = b"VBST"
FORMAT_VERSION = 1

_FIELD_HEADER = struct.Struct("<4sHHB")
_TRAJ_HEADER = struct.Struct("<4sHIdd")


def field_to_bytes(f: ScalarField) -> bytes:
    n = f.grid_size
    header = _FIELD_HEADER.pack(FIELD_MAGIC, FORMAT_VERSION, n, int(f.mean_zero_required))
    flat = np.empty((n * n, 2), dtype="<f8")
    flat[:, 0] = f.modes.real.ravel()
    flat[:, 1] = f.modes.imag.ravel()
    return header + flat.tobytes()


def field_from_bytes(buf: bytes, offset: int = 0) -> tuple[ScalarField, int]:
    magic, version, n, mean_zero = _FIELD_HEADER.unpack_from(buf, offset)
    if magic != FIELD_MAGIC:
        raise ConfigurationError("not a field checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported field format version {version}")
    offset += _FIELD_HEADER.size
    count = n * n
    flat = np.frombuffer(buf, dtype="<f8", count=2 * count, offset=offset).reshape(count, 2)
    modes = (flat[:, 0] + 1j * flat[:, 1]).reshape(n, n)
    offset += 16 * count
    return ScalarField(modes, mean_zero_required=bool(mean_zero)), offset


def write_field(path, f: ScalarField) -> None:
    Path(path).write_bytes(field_to_bytes(f))


def read_field(path) -> ScalarField:
    f, _ = field_from_bytes(Path(path).read_bytes())
    return f


def write_trajectory(path, traj: VorticityTrajectory) -> None:
    header = _TRAJ_HEADER.pack(TRAJ_MAGIC, FORMAT_VERSION, traj.steps, traj.dt, traj.nu)
    blocks = b"".join(field_to_bytes(f) for f in traj.fields)
    Path(path).write_bytes(header + blocks)


def read_trajectory(path) -> VorticityTrajectory:
    buf = Path(path).read_bytes()
    magic, version, steps, dt, nu = _TRAJ_HEADER.unpack_from(buf, 0)
    if magic != TRAJ_MAGIC:
        raise ConfigurationError("not a trajectory checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported trajectory format version {version}")
    offset = _TRAJ_HEADER.size
    fields = []
    for _ in range(steps + 1):
        f, offset = field_from_bytes(buf, offset)
        fields.append(f)
    return VorticityTrajectory(tuple(fields), nu=nu, dt=dt)


# ---------------------------------------------------------------------------
# solution bundle


def _config_to_dict(config: SolverConfig) -> dict:
    return {
        "N": config.N,
        "L": config.L,
        "M_outer": config.M_outer,
        "M_inner": config.M_inner,
        "nu": config.nu,
        "T": config.T,
        "alpha": config.alpha,
        "picard_tol": config.picard_tol,
        "picard_tol_mode": config.picard_tol_mode,
        "max_iter": config.max_iter,
        "base_seed": config.base_seed,
        "mode_threshold_rel": config.mode_threshold_rel,
        "groups": config.groups,
    }


def _config_from_dict(d: dict) -> SolverConfig:
    return SolverConfig(**d)


def write_solution_bundle(directory, solution: BsdeSolution) -> list:
    """Write the bundle; returns the list of files written (relative names)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema_version": FORMAT_VERSION,
        "config": _config_to_dict(solution.config),
        "norms": solution.norms,
        "history": list(solution.history),
        "path_ensemble_meta": solution.path_ensemble_meta,
        "iteration_index": solution.y.iteration_index,
        "alpha": solution.y.alpha,
    }
    (directory / "solution.json").write_text(
        json.dumps(doc, sort_keys=True, indent=1) + "\n"
    )
    write_field(directory / "psi.vbsf", solution.psi)
    traj = VorticityTrajectory(
        solution.y.fields, nu=solution.config.nu, dt=solution.config.dt
    )
    write_trajectory(directory / "y_fields.vbst", traj)
    return ["solution.json", "psi.vbsf", "y_fields.vbst"]


def read_solution_bundle(directory) -> BsdeSolution:
    directory = Path(directory)
    doc = json.loads((directory / "solution.json").read_text())
    config = _config_from_dict(doc["config"])
    psi = read_field(directory / "psi.vbsf")
    traj = read_trajectory(directory / "y_fields.vbst")
    iterate = PicardIterate(traj.fields, doc["iteration_index"], doc["alpha"])
    return BsdeSolution(
        y=iterate,
        z_fields=extract_Z(iterate),
        psi=psi,
        config=config,
        norms=doc["norms"],
        history=tuple(doc["history"]),
        path_ensemble_meta=doc["path_ensemble_meta"],
    )

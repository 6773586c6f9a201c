import struct

import numpy as np
import pytest

from vortexbsde.bsde_engine import SolverConfig, picard_solve
from vortexbsde.checkpoint import (
    FIELD_MAGIC,
    TRAJ_MAGIC,
    field_from_bytes,
    field_to_bytes,
    read_field,
    read_solution_bundle,
    read_trajectory,
    write_field,
    write_solution_bundle,
    write_trajectory,
)
from vortexbsde.diagnostics import full_json_report
from vortexbsde.errors import ConfigurationError
from vortexbsde.spectral_oracle import evolve
from vortexbsde.torus_field import field_from_mode_list

from conftest import random_mean_zero_field


class TestFieldFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        f = random_mean_zero_field(16, 5)
        p = tmp_path / "f.vbsf"
        write_field(p, f)
        g = read_field(p)
        assert np.array_equal(g.modes, f.modes)
        assert g.mean_zero_required == f.mean_zero_required

    def test_documented_byte_layout(self):
        # header: magic 'VBSF', version u16, N u16, mean_zero u8 (little endian),
        # then N*N (re, im) f64 pairs in row-major mode order.
        f = field_from_mode_list(4, [(1, 0, -0.5j)])
        buf = field_to_bytes(f)
        magic, version, n, mz = struct.unpack_from("<4sHHB", buf, 0)
        assert magic == FIELD_MAGIC
        assert (version, n, mz) == (1, 4, 1)
        coeffs = np.frombuffer(buf, dtype="<f8", offset=9).reshape(16, 2)
        # row-major: entry index 4 is mode (k1=1, k2=0) = -0.5j
        assert coeffs[4, 0] == 0.0 and coeffs[4, 1] == -0.5
        # its Hermitian partner (k1=-1 -> storage row 3) carries +0.5j
        assert coeffs[12, 1] == 0.5
        assert len(buf) == 9 + 16 * 16

    def test_bad_magic(self):
        with pytest.raises(ConfigurationError):
            field_from_bytes(b"XXXX" + b"\x00" * 64)


class TestTrajectoryFormat:
    def test_round_trip(self, tmp_path):
        psi = field_from_mode_list(16, [(1, 0, -0.5j), (0, 2, 0.5)])
        traj = evolve(psi, 0.2, 0.1, 8)
        p = tmp_path / "t.vbst"
        write_trajectory(p, traj)
        back = read_trajectory(p)
        assert back.nu == traj.nu
        assert back.dt == traj.dt
        assert back.steps == traj.steps
        for a, b in zip(back.fields, traj.fields):
            assert np.array_equal(a.modes, b.modes)

    def test_header_layout(self, tmp_path):
        psi = field_from_mode_list(16, [(1, 0, -0.5j)])
        traj = evolve(psi, 0.2, 0.1, 4)
        p = tmp_path / "t.vbst"
        write_trajectory(p, traj)
        buf = p.read_bytes()
        magic, version, steps, dt, nu = struct.unpack_from("<4sHIdd", buf, 0)
        assert magic == TRAJ_MAGIC
        assert (version, steps) == (1, 4)
        assert dt == traj.dt and nu == 0.2

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.vbst"
        p.write_bytes(b"NOPE" + b"\x00" * 30)
        with pytest.raises(ConfigurationError):
            read_trajectory(p)


class TestSolutionBundle:
    def test_round_trip_and_rediagnose(self, tmp_path):
        psi = field_from_mode_list(16, [(1, 0, -0.5j)])
        cfg = SolverConfig(
            N=16, L=16, M_outer=4, M_inner=200, nu=0.1, T=0.4,
            picard_tol=2.0, picard_tol_mode="noise_floor_multiple", max_iter=4,
        )
        sol = picard_solve(psi, cfg)
        files = write_solution_bundle(tmp_path / "bundle", sol)
        assert set(files) == {"solution.json", "psi.vbsf", "y_fields.vbst"}
        back = read_solution_bundle(tmp_path / "bundle")
        assert np.array_equal(back.y.mode_stack(), sol.y.mode_stack())
        assert back.config == sol.config
        # diagnostics must be reproducible from the on-disk record alone
        assert full_json_report(back) == full_json_report(sol)

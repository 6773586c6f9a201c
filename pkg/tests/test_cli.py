import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from vortexbsde import cli
from vortexbsde.bsde_engine import BsdeSolution, PicardIterate, SolverConfig, extract_Z
from vortexbsde.checkpoint import write_solution_bundle
from vortexbsde.errors import ConfigurationError
from vortexbsde.spectral_oracle import evolve
from vortexbsde.torus_field import field_from_mode_list


def write_cfg(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


ORACLE_CFG = """
# single-mode oracle
outdir = {out}
N = 32
L = 64
nu = 0.1
T = 0.5
psi_modes = 1 0 0 -0.5
"""

SOLVE_CFG = """
outdir = {out}
N = 16
L = 16
nu = 0.3
T = 0.2
psi_modes = 1 0 0 -0.5 ; 0 2 0.5 0
M_inner = 150
M_outer = 8
max_iter = 5
picard_tol = 2.0
picard_tol_mode = noise_floor_multiple
base_seed = 11
"""


class TestConfigParsing:
    def test_comments_and_types(self):
        raw = cli._parse_kv_text("a = 1  # trailing\n\n# full line\nb = x\n")
        assert raw == {"a": "1", "b": "x"}

    def test_duplicate_key(self):
        with pytest.raises(ConfigurationError, match="line 2"):
            cli._parse_kv_text("a = 1\na = 2\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigurationError, match="line 1"):
            cli._parse_kv_text("nonsense\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="unknown"):
            cli.ORACLE_SCHEMA.parse({"bogus": "1"})

    def test_missing_required(self):
        with pytest.raises(ConfigurationError, match="missing required"):
            cli.ORACLE_SCHEMA.parse({"outdir": "x"})

    def test_type_error_names_key(self):
        raw = {"outdir": "x", "N": "abc", "L": "4", "nu": "0.1", "T": "0.1",
               "psi_modes": "1 0 0 -0.5"}
        with pytest.raises(ConfigurationError, match="'N'"):
            cli.ORACLE_SCHEMA.parse(raw)

    def test_mode_syntax(self):
        entries = cli._parse_modes("1 0 0 -0.5 ; 0 2 0.5 0")
        assert entries[0] == (1, 0, -0.5j)
        assert entries[1] == (0, 2, 0.5 + 0j)
        with pytest.raises(ValueError):
            cli._parse_modes("1 0 0")

    def test_env_config_dir(self, tmp_path, monkeypatch):
        cfg = write_cfg(tmp_path / "a.cfg", "outdir = x\n")
        monkeypatch.setenv(cli.ENV_CONFIG_DIR, str(tmp_path))
        assert cli.resolve_config_path("a.cfg") == cfg
        with pytest.raises(ConfigurationError):
            cli.resolve_config_path("missing.cfg")


class TestOracleCommand:
    def test_enstrophy_matches_exact_decay(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_cfg(tmp_path / "o.cfg", ORACLE_CFG.format(out=out))
        assert cli.main(["oracle", str(cfg)]) == 0
        lines = (out / "oracle_series.csv").read_text().strip().splitlines()
        assert lines[1] == "tau,enstrophy,energy,sup_omega"
        for row in lines[2:]:
            tau, ens, _, _ = (float(v) for v in row.split(","))
            exact = np.exp(-8 * np.pi**2 * 0.1 * tau) / 2
            assert abs(ens - exact) <= 1e-5 * max(exact, 1e-30)

    def test_zero_initial_data(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_cfg(
            tmp_path / "o.cfg",
            ORACLE_CFG.format(out=out).replace("1 0 0 -0.5", "1 0 0 0"),
        )
        assert cli.main(["oracle", str(cfg)]) == 0
        for row in (out / "oracle_series.csv").read_text().strip().splitlines()[2:]:
            _, ens, energy, sup = (float(v) for v in row.split(","))
            assert ens == 0.0 and energy == 0.0 and sup == 0.0

    def test_rerun_byte_identical(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_cfg(tmp_path / "o.cfg", ORACLE_CFG.format(out=out))
        cli.main(["oracle", str(cfg)])
        first = (out / "oracle_series.csv").read_bytes()
        first_traj = (out / "trajectory.vbst").read_bytes()
        cli.main(["oracle", str(cfg)])
        assert (out / "oracle_series.csv").read_bytes() == first
        assert (out / "trajectory.vbst").read_bytes() == first_traj


class TestSolveCommand:
    def test_solve_writes_bundle_and_diagnostics(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_cfg(tmp_path / "s.cfg", SOLVE_CFG.format(out=out))
        assert cli.main(["solve", str(cfg)]) == 0
        assert (out / "solution" / "y_fields.vbst").exists()
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["max_principle"]["pass"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "success"
        for entry in manifest["outputs"]:
            p = out / entry["path"]
            assert hashlib.sha256(p.read_bytes()).hexdigest() == entry["sha256"]

    def test_config_error_exit_code(self, tmp_path):
        cfg = write_cfg(tmp_path / "bad.cfg", "outdir = x\nbogus = 1\n")
        assert cli.main(["solve", str(cfg)]) == 2

    def test_missing_config_exit_code(self):
        assert cli.main(["solve", "/does/not/exist.cfg"]) == 2

    def test_nonconvergence_exit_code_and_manifest(self, tmp_path):
        out = tmp_path / "out"
        text = SOLVE_CFG.format(out=out).replace("picard_tol = 2.0", "picard_tol = 1e-9")
        text = text.replace("max_iter = 5", "max_iter = 1")
        cfg = write_cfg(tmp_path / "s.cfg", text)
        assert cli.main(["solve", str(cfg)]) == 4
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "error"
        assert manifest["error"]["type"] == "NonConvergenceError"
        assert manifest["error"]["history"]  # ratio history embedded

    def test_numerical_failure_exit_code(self, tmp_path):
        out = tmp_path / "out"
        text = (
            f"outdir = {out}\nN = 16\nL = 2\nnu = 1e-5\nT = 2.0\n"
            "psi_modes = 1 0 0 -20 ; 0 2 20 0\nM_inner = 8\ngroups = 2\n"
        )
        cfg = write_cfg(tmp_path / "s.cfg", text)
        assert cli.main(["solve", str(cfg)]) == 3


class TestCompareCommand:
    def _oracle_as_solution(self, tmp_path):
        psi = field_from_mode_list(16, [(1, 0, -0.5j), (0, 2, 0.5)])
        traj = evolve(psi, 0.3, 0.2, 16)
        cfg = SolverConfig(N=16, L=16, M_outer=4, M_inner=8, nu=0.3, T=0.2, groups=2)
        it = PicardIterate(traj.fields, 1, 0.0)
        sol = BsdeSolution(
            y=it, z_fields=extract_Z(it), psi=psi, config=cfg,
            norms={"c1": 1.0, "c0": 1.0, "alpha": 0.0, "y_sup": 1.0,
                   "z_bmo_sq": 0.0, "z_bmo_sq_debiased": 0.0, "z_bmo_sq_se": 0.0,
                   "z_bmo_group_values": []},
            history=(), path_ensemble_meta={},
        )
        bundle = tmp_path / "bundle"
        write_solution_bundle(bundle, sol)
        from vortexbsde.checkpoint import write_trajectory

        traj_path = tmp_path / "traj.vbst"
        write_trajectory(traj_path, traj)
        return bundle, traj_path

    def test_oracle_against_itself_zero_error(self, tmp_path):
        bundle, traj_path = self._oracle_as_solution(tmp_path)
        out = tmp_path / "cmp"
        cfg = write_cfg(
            tmp_path / "c.cfg",
            f"outdir = {out}\nsolution_bundle = {bundle}\ntrajectory = {traj_path}\npaths = 3\n",
        )
        assert cli.main(["compare", str(cfg)]) == 0
        rows = (out / "comparison.csv").read_text().strip().splitlines()[2:]
        assert len(rows) == 3 * 17
        assert all(float(r.split(",")[2]) == 0.0 for r in rows)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["max_l2_diff"] == 0.0

    def test_zero_paths_rejected(self, tmp_path):
        bundle, traj_path = self._oracle_as_solution(tmp_path)
        cfg = write_cfg(
            tmp_path / "c.cfg",
            f"outdir = {tmp_path/'cmp'}\nsolution_bundle = {bundle}\n"
            f"trajectory = {traj_path}\npaths = 0\n",
        )
        assert cli.main(["compare", str(cfg)]) == 2

    def test_solution_vs_oracle_below_tolerance(self, tmp_path):
        # end-to-end: solve, evolve the same data, compare; the Monte Carlo
        # solution tracks the deterministic trajectory at MC accuracy
        out = tmp_path / "out"
        cli.main(["solve", str(write_cfg(tmp_path / "s.cfg", SOLVE_CFG.format(out=out)))])
        ocfg = write_cfg(
            tmp_path / "o.cfg",
            f"outdir = {tmp_path/'traj'}\nN = 16\nL = 16\nnu = 0.3\nT = 0.2\n"
            "psi_modes = 1 0 0 -0.5 ; 0 2 0.5 0\n",
        )
        cli.main(["oracle", str(ocfg)])
        ccfg = write_cfg(
            tmp_path / "c.cfg",
            f"outdir = {tmp_path/'cmp'}\nsolution_bundle = {out/'solution'}\n"
            f"trajectory = {tmp_path/'traj'/'trajectory.vbst'}\npaths = 4\n",
        )
        assert cli.main(["compare", str(ccfg)]) == 0
        summary = json.loads((tmp_path / "cmp" / "summary.json").read_text())
        assert summary["max_l2_diff"] < 0.02  # MC scale at M_inner = 150

    def test_parameter_mismatch(self, tmp_path):
        bundle, _ = self._oracle_as_solution(tmp_path)
        other = evolve(field_from_mode_list(16, [(1, 0, -0.5j)]), 0.9, 0.2, 16)
        from vortexbsde.checkpoint import write_trajectory

        bad = tmp_path / "bad.vbst"
        write_trajectory(bad, other)
        cfg = write_cfg(
            tmp_path / "c.cfg",
            f"outdir = {tmp_path/'cmp'}\nsolution_bundle = {bundle}\n"
            f"trajectory = {bad}\npaths = 2\n",
        )
        assert cli.main(["compare", str(cfg)]) == 2


class TestDiagnoseCommand:
    def test_diagnose_solution(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_cfg(tmp_path / "s.cfg", SOLVE_CFG.format(out=out))
        cli.main(["solve", str(cfg)])
        dcfg = write_cfg(
            tmp_path / "d.cfg",
            f"outdir = {tmp_path/'diag'}\nsolution_bundle = {out/'solution'}\n",
        )
        assert cli.main(["diagnose", str(dcfg)]) == 0
        doc = json.loads((tmp_path / "diag" / "diagnostics.json").read_text())
        # identical to the report the solve emitted
        assert doc == json.loads((out / "diagnostics.json").read_text())

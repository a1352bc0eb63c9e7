import json
import os

import numpy as np
import pytest

from orbistab import RunConfig
from orbistab.__main__ import Main
from orbistab.artifacts import read_table


def run(command: str, config: str, out, *extra: str) -> int:

    return Main.invoke([command, "--config", config, "--out", str(out), "--quiet", *extra])


def last_error(capsys) -> str:

    return capsys.readouterr().err.strip().splitlines()[-1]


def sidecar(out, name: str) -> dict:

    with open(os.path.join(out, f"{name}.meta.json")) as file:
        return json.load(file)


class TestArguments:
    @staticmethod
    def test_unknown_command(tmp_path):

        with pytest.raises(SystemExit) as info:
            Main.invoke(["stabilize", "--config", "x.json", "--out", str(tmp_path)])
        assert info.value.code == 2

    @staticmethod
    def test_missing_config(tmp_path, capsys):

        assert run("plan", str(tmp_path / "absent.json"), tmp_path / "out") == 2
        assert last_error(capsys).startswith("config-error")

    @staticmethod
    def test_invalid_config(tmp_path, capsys):

        filepath = tmp_path / "bad.json"
        filepath.write_text(json.dumps({"orbit": {"a2": "wide"}}))
        assert run("plan", str(filepath), tmp_path / "out") == 2
        assert last_error(capsys).startswith("config-error")


class TestPlan:
    @staticmethod
    def test_wide_swing(tmp_path, config_file):

        config = config_file(orbit={"a2": 0.5, "grid": 256})
        out = tmp_path / "out"
        assert run("plan", config, out) == 0

        header, rows = read_table(str(out / "orbit.csv"), "orbit")
        assert header == ["s", "phi1", "phi2", "dphi1", "dphi2", "rho", "u_star"]
        assert rows.shape == (256, 7)
        assert np.all(rows[:, 5] > 0)

        header, rows = read_table(str(out / "rho_fig2.csv"), "velocity profile")
        assert header == ["s", "rho", "rho_squared"]
        assert np.allclose(rows[:, 2], rows[:, 1] ** 2)

        assert (out / "plots" / "rho.svg").read_text().lstrip().startswith("<?xml")
        meta = sidecar(out, "orbit.csv")
        assert meta["command"] == "plan"
        assert meta["artifact"] == "orbit.csv"
        assert meta["config_hash"] == RunConfig.load(config).config_hash()
        assert sidecar(out, "plots/rho.svg")["artifact"] == "rho.svg"

    @staticmethod
    def test_reproducible(tmp_path, config_file):

        config = config_file(orbit={"grid": 256})
        assert run("plan", config, tmp_path / "first") == 0
        assert run("plan", config, tmp_path / "second") == 0
        for name in ("orbit.csv", "rho_fig2.csv", "plots/rho.svg", "orbit.csv.meta.json"):
            assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()

    @staticmethod
    def test_infeasible_swing(tmp_path, config_file, capsys):

        assert run("plan", config_file(orbit={"a2": 0.7, "grid": 256}), tmp_path / "out") == 3
        assert last_error(capsys).startswith("infeasible-orbit")
        assert not (tmp_path / "out" / "orbit.csv").exists()


class TestMissingArtifacts:
    @staticmethod
    def test_linearize_before_plan(tmp_path, config_file, capsys):

        assert run("linearize", config_file(), tmp_path / "out") == 2
        assert "missing orbit" in last_error(capsys)

    @staticmethod
    def test_simulate_before_riccati(tmp_path, config_file, capsys):

        config = config_file(orbit={"grid": 256})
        out = tmp_path / "out"
        assert run("plan", config, out) == 0
        assert run("simulate", config, out) == 2
        message = last_error(capsys)
        assert message.startswith("missing-artifact")
        assert "missing gain schedule" in message
        assert not (out / "trace.csv").exists()

    @staticmethod
    def test_malformed_linearization(tmp_path, config_file, capsys):

        config = config_file(orbit={"grid": 256})
        out = tmp_path / "out"
        assert run("plan", config, out) == 0
        (out / "linearization.csv").write_text("s,A[0][0]\n0,1\n")
        assert run("riccati", config, out) == 2
        assert "malformed transverse linearization" in last_error(capsys)


@pytest.mark.slow
class TestPipeline:
    @staticmethod
    def test_reference_run(tmp_path, config_file, capsys):

        config = config_file()
        out = tmp_path / "out"
        for command in Main.__commands__:
            assert run(command, config, out) == 0, command

        for name in ("orbit.csv", "linearization.csv", "gains.csv", "riccati_summary.json", "trace.csv", "simulation_summary.json"):
            assert (out / name).is_file()
            assert sidecar(out, name)["config_hash"] == RunConfig.load(config).config_hash()
        for name in ("rho.svg", "phase_portraits.svg", "transverse_norm.svg", "control.svg"):
            assert (out / "plots" / name).is_file()

        summary = json.loads((out / "riccati_summary.json").read_text())
        assert summary["residual_max"] <= 2e-4
        assert len(summary["multipliers"]) == 4
        assert summary["config"]["kappa"] == 0.1

        simulation = json.loads((out / "simulation_summary.json").read_text())
        assert simulation["samples"] == 2001
        assert simulation["convergence_time"] is not None

        report = json.loads((out / "verify_report.json").read_text())
        assert report["passed"]
        assert {"riccati_residual", "closed_loop_transverse_multipliers", "neutral_tangent_angle", "lyapunov_max_vdot"} <= {c["name"] for c in report["checks"]}

        trace = (out / "trace.csv").read_bytes()
        assert run("simulate", config, out) == 0
        assert (out / "trace.csv").read_bytes() == trace
        assert run("simulate", config, out, "--seed", "1") == 0
        assert (out / "trace.csv").read_bytes() != trace

        capsys.readouterr()
        strict = config_file(riccati={"residual_tol": 1e-9, "max_outer_iterations": 1})
        assert run("riccati", strict, out) == 4
        assert last_error(capsys).startswith("no-certificate")

"""
Tests for the command line.
"""
import csv
import json
from pathlib import Path
from unittest.mock import patch

import pytest

from dcm_step_planner import cli
from dcm_step_planner.horizon import SequencingError
from dcm_step_planner.main import main
from dcm_step_planner.qp import InfeasibleError

DEFAULT_CONFIG = str(Path(__file__).resolve().parent.parent / "config" / "default.json")


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("DCM_PLANNER_OUT_DIR", "DCM_PLANNER_SEED", "DCM_PLANNER_PRECISION",
                 "DCM_PLANNER_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def short_config(tmp_path):
    """Config document with a half-second simulation."""
    path = tmp_path / "short.json"
    path.write_text(json.dumps({"scenario": {"name": "short", "duration": 0.5}}), encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return list(csv.reader(f))


class TestParser:
    """Test cases for argument parsing."""

    def test_global_flags_before_command(self):
        args = cli.build_parser().parse_args(["--seed", "4", "--out", "x", "plan", "--horizon", "1.5"])

        assert args.seed == 4
        assert args.out == "x"
        assert args.command == "plan"
        assert args.horizon == 1.5

    def test_command_required(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args([])

    def test_sensitivity_flags(self):
        args = cli.build_parser().parse_args(["sensitivity", "--samples", "0", "--fd-check"])

        assert args.samples == 0
        assert args.fd_check


class TestPlanCommand:
    """Test cases for the plan command."""

    def test_zero_horizon_writes_one_step(self, tmp_path):
        code = main(["--config", DEFAULT_CONFIG, "--out", str(tmp_path), "plan", "--horizon", "0"])

        assert code == cli.EXIT_OK
        rows = read_csv(tmp_path / "steps.csv")
        assert rows[0] == ["k", "side", "foot", "p_x", "p_y", "T", "gamma", "b_x", "b_y"]
        assert len(rows) == 2
        assert rows[1][1:3] == ["negative", "left"]
        assert len(read_csv(tmp_path / "dcm_chain.csv")) == 2

    def test_default_horizon(self, tmp_path, capsys):
        code = main(["--config", DEFAULT_CONFIG, "--out", str(tmp_path), "plan"])

        assert code == cli.EXIT_OK
        rows = read_csv(tmp_path / "steps.csv")
        assert float(rows[-1][5]) >= 3.0
        assert "mean velocity 0.3333" in capsys.readouterr().out

    def test_reruns_are_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["--config", DEFAULT_CONFIG, "--out", str(tmp_path / name), "plan"]) == cli.EXIT_OK

        for file_name in ("steps.csv", "dcm_chain.csv"):
            assert (tmp_path / "a" / file_name).read_bytes() == (tmp_path / "b" / file_name).read_bytes()

    def test_solver_failure(self, tmp_path):
        with patch("dcm_step_planner.cli.generate_sequence",
                   side_effect=SequencingError("step 0 failed: boom", 0)):
            code = main(["--config", DEFAULT_CONFIG, "--out", str(tmp_path), "plan"])

        assert code == cli.EXIT_SOLVER_FAILURE


class TestSensitivityCommand:
    """Test cases for the sensitivity command."""

    def test_reference_context(self, tmp_path):
        code = main(["--config", DEFAULT_CONFIG, "--out", str(tmp_path),
                     "sensitivity", "--samples", "0", "--fd-check"])

        assert code == cli.EXIT_OK
        report = json.loads((tmp_path / "sensitivity.json").read_text(encoding="utf-8"))
        assert report["active_set"] == []
        assert report["d_primal"][1][1] == pytest.approx(0.3587, abs=1e-3)
        assert report["fd_check"]["max_relative_deviation"] < cli.FD_TOLERANCE
        assert report["samples"] == 0
        assert "plane_fit" not in report
        assert read_csv(tmp_path / "surface.csv") == [
            ["index", "theta_x", "theta_y", "p_x", "p_y", "gamma", "b_x", "b_y",
             "active_set", "active_set_changed", "infeasible"],
        ]

    def test_surface_samples(self, tmp_path):
        code = main(["--config", DEFAULT_CONFIG, "--out", str(tmp_path), "--seed", "1",
                     "sensitivity", "--samples", "20"])

        assert code == cli.EXIT_OK
        report = json.loads((tmp_path / "sensitivity.json").read_text(encoding="utf-8"))
        assert report["surface_active_sets"] == [[]]
        assert "p_Ty" in report["plane_fit"]
        assert len(read_csv(tmp_path / "surface.csv")) == 21

    def test_finite_difference_mismatch(self, tmp_path):
        with patch("dcm_step_planner.cli.relative_deviation", return_value=1.0):
            code = main(["--config", DEFAULT_CONFIG, "--out", str(tmp_path),
                         "sensitivity", "--samples", "0", "--fd-check"])

        assert code == cli.EXIT_SOLVER_FAILURE
        assert (tmp_path / "sensitivity.json").exists()


class TestSimulateCommand:
    """Test cases for the simulate command."""

    def test_short_run(self, tmp_path, short_config):
        code = main(["--config", short_config, "--out", str(tmp_path), "simulate"])

        assert code == cli.EXIT_OK
        assert len(read_csv(tmp_path / "trace.csv")) == 51
        assert len(read_csv(tmp_path / "steps.csv")) == 2
        metrics = json.loads((tmp_path / "metrics.json").read_text(encoding="utf-8"))
        assert metrics["steps_taken"] == 1
        assert metrics["failed_at"] is None

    def test_fall_writes_partial_result(self, tmp_path, short_config):
        with patch("dcm_step_planner.simulator.solve_step", side_effect=InfeasibleError("boom")):
            code = main(["--config", short_config, "--out", str(tmp_path), "simulate"])

        assert code == cli.EXIT_FALL
        metrics = json.loads((tmp_path / "metrics.json").read_text(encoding="utf-8"))
        assert metrics["failed_at"] == 0.0

    def test_sweep(self, tmp_path, short_config):
        sweep = tmp_path / "sweep.yaml"
        sweep.write_text(
            "scenarios:\n"
            "  - {name: calm, duration: 0.2}\n"
            "  - {name: pushed, duration: 0.2, pushes: [{time: 0.1, delta_zeta: [0.0, 0.01]}]}\n",
            encoding="utf-8",
        )

        code = main(["--config", short_config, "--out", str(tmp_path / "out"), "simulate",
                     "--sweep", str(sweep)])

        assert code == cli.EXIT_OK
        for name in ("calm", "pushed"):
            assert (tmp_path / "out" / name / "trace.csv").exists()
            assert (tmp_path / "out" / name / "metrics.json").exists()

    def test_sweep_names_must_be_unique(self, tmp_path, short_config):
        sweep = tmp_path / "sweep.json"
        sweep.write_text(json.dumps([{"name": "a", "duration": 0.1}, {"name": "a", "duration": 0.1}]),
                         encoding="utf-8")

        code = main(["--config", short_config, "--out", str(tmp_path), "simulate", "--sweep", str(sweep)])

        assert code == cli.EXIT_CONFIG_ERROR

    @pytest.mark.parametrize("name, content", [
        ("absent.json", None),
        ("broken.json", "[{\"name\": "),
        ("broken.yaml", "scenarios: [unclosed"),
    ])
    def test_unreadable_sweep_file(self, tmp_path, short_config, name, content):
        sweep = tmp_path / name
        if content is not None:
            sweep.write_text(content, encoding="utf-8")

        code = main(["--config", short_config, "--out", str(tmp_path), "simulate", "--sweep", str(sweep)])

        assert code == cli.EXIT_CONFIG_ERROR

    def test_sweep_command_outside_bounds(self, tmp_path, short_config):
        sweep = tmp_path / "sweep.json"
        sweep.write_text(json.dumps([{"name": "fast", "duration": 0.2,
                                      "commands": [{"time": 0.1, "l_nom": 0.9}]}]), encoding="utf-8")

        code = main(["--config", short_config, "--out", str(tmp_path / "out"), "simulate",
                     "--sweep", str(sweep)])

        assert code == cli.EXIT_CONFIG_ERROR
        assert not (tmp_path / "out" / "fast").exists()


class TestSampleConfigCommand:
    """Test cases for the sample-config command."""

    @pytest.mark.parametrize("name", ["sample.json", "sample.yaml"])
    def test_writes_loadable_config(self, tmp_path, name):
        target = tmp_path / name

        code = main(["--config", DEFAULT_CONFIG, "sample-config", str(target)])

        assert code == cli.EXIT_OK
        assert main(["--config", str(target), "--out", str(tmp_path / "out"),
                     "plan", "--horizon", "0"]) == cli.EXIT_OK

    def test_unwritable_target(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("", encoding="utf-8")

        code = main(["--config", DEFAULT_CONFIG, "sample-config", str(blocker / "sample.json")])

        assert code == cli.EXIT_CONFIG_ERROR


class TestConfigErrors:
    """Test cases for configuration failures."""

    def test_missing_config(self, tmp_path):
        code = main(["--config", str(tmp_path / "absent.json"), "plan"])

        assert code == cli.EXIT_CONFIG_ERROR

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"plan": {"steps": 4}}), encoding="utf-8")

        assert main(["--config", str(path), "--out", str(tmp_path), "plan"]) == cli.EXIT_CONFIG_ERROR

    def test_command_outside_bounds(self, tmp_path):
        path = tmp_path / "fast.json"
        path.write_text(json.dumps({"scenario": {"commands": [{"time": 1.0, "l_nom": 0.9}]}}),
                        encoding="utf-8")

        assert main(["--config", str(path), "--out", str(tmp_path), "simulate"]) == cli.EXIT_CONFIG_ERROR

    def test_invalid_precision_flag(self, tmp_path):
        code = main(["--config", DEFAULT_CONFIG, "--out", str(tmp_path), "--precision", "30", "plan"])

        assert code == cli.EXIT_CONFIG_ERROR

    def test_log_file(self, tmp_path):
        log_file = tmp_path / "run.log"

        code = main(["--config", DEFAULT_CONFIG, "--out", str(tmp_path), "--log-file", str(log_file),
                     "plan", "--horizon", "0"])

        assert code == cli.EXIT_OK
        assert "Running command 'plan'" in log_file.read_text(encoding="utf-8")

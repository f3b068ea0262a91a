"""
Tests for cli.py and scenario.py - scenario files, exit codes and result files
"""
import csv
import json
import os
import re

import pytest

import cli
from cli import EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERIC, EXIT_PASS, main, run_scenario
from errors import ConfigError
from scenario import convergence_study, load_scenario

COMMUTING = """
[scenario]
name = "commuting"
kind = "frobenius"
dim = 2

[fields]
b = "rotation2d"
v = "dilation"

[params]
ts = [0.5]
ss = [0.5]
samples = 20
dt = 1e-2
"""

NOT_COMMUTING = """
[scenario]
name = "not_commuting"
kind = "frobenius"
dim = 2

[fields]
b = "rotation2d"
v = { builtin = "constant", value = [1.0, 0.0] }

[params]
ts = [0.5]
ss = [0.5]
samples = 20
dt = 1e-2
"""

BAD_EXPRESSION = """
[scenario]
name = "bad_expression"
kind = "frobenius"
dim = 2

[fields]
b = ["sin(", "x"]
v = "dilation"
"""

BLOW_UP = """
[scenario]
name = "blow_up"
kind = "flow_check"
dim = 2

[fields]
b = ["x^2", "0"]

[params]
times = [1.0]
samples = 10
box = [5.0, 10.0]
dt = 1e-2
"""


def write_scenario(directory, name: str, text: str) -> str:
    path = directory / f"{name}.toml"
    path.write_text(text)
    return str(path)


def read_summary(out_dir, name: str) -> dict:
    with open(os.path.join(out_dir, name, "summary.json")) as f:
        return json.load(f)


class TestExitCodes:
    """0 pass, 1 failed check, 2 configuration, 3 numerics"""

    def test_pass(self, tmp_path):
        path = write_scenario(tmp_path, "commuting", COMMUTING)
        assert run_scenario(path, str(tmp_path / "out")) == EXIT_PASS
        summary = read_summary(tmp_path / "out", "commuting")
        assert summary["pass"] is True
        assert summary["reason"] is None
        assert {row["name"] for row in summary["checks"]} >= {
            "max_defect", "bracket_residual", "gte_hypothesis", "non_concentration",
        }

    def test_failed_check(self, tmp_path):
        path = write_scenario(tmp_path, "not_commuting", NOT_COMMUTING)
        assert run_scenario(path, str(tmp_path / "out")) == EXIT_FAIL
        summary = read_summary(tmp_path / "out", "not_commuting")
        assert summary["pass"] is False
        assert summary["reason"] == "assertion_failed"
        assert "max_defect" in summary["message"]

    def test_expression_error_reports_position(self, tmp_path):
        path = write_scenario(tmp_path, "bad_expression", BAD_EXPRESSION)
        assert run_scenario(path, str(tmp_path / "out")) == EXIT_CONFIG
        summary = read_summary(tmp_path / "out", "bad_expression")
        assert summary["reason"] == "expr_syntax"
        assert "position 4" in summary["message"]
        with open(tmp_path / "out" / "bad_expression" / "diagnostics.json") as f:
            assert json.load(f) == {"position": 4}

    def test_unknown_kind(self, tmp_path):
        path = write_scenario(tmp_path, "unknown", COMMUTING.replace('"frobenius"', '"teleport"'))
        assert run_scenario(path, str(tmp_path / "out")) == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        assert run_scenario(str(tmp_path / "absent.toml"), str(tmp_path / "out")) == EXIT_CONFIG

    def test_integration_failure(self, tmp_path):
        """x' = x^2 blows up before t = 1"""
        path = write_scenario(tmp_path, "blow_up", BLOW_UP)
        assert run_scenario(path, str(tmp_path / "out")) == EXIT_NUMERIC
        assert read_summary(tmp_path / "out", "blow_up")["reason"] == "non_finite_state"

    def test_non_numeric_param(self, tmp_path):
        """samples = "many" is a configuration error, not a crash"""
        path = write_scenario(tmp_path, "many", BLOW_UP.replace("samples = 10", 'samples = "many"'))
        assert run_scenario(path, str(tmp_path / "out")) == EXIT_CONFIG
        summary = read_summary(tmp_path / "out", "many")
        assert summary["pass"] is False
        assert summary["reason"] == "invalid_param"
        assert "params.samples" in summary["message"]

    def test_non_boolean_flag(self, tmp_path):
        path = write_scenario(tmp_path, "flag", COMMUTING + 'lemma = "yes"\n')
        with pytest.raises(ConfigError) as info:
            load_scenario(path)
        assert info.value.reason == "invalid_param"

    def test_unknown_closed_form(self, tmp_path):
        path = write_scenario(tmp_path, "closed", NOT_COMMUTING + 'expect = "noncommute"\nclosed_form = "spiral"\n')
        assert run_scenario(path, str(tmp_path / "out")) == EXIT_CONFIG
        assert read_summary(tmp_path / "out", "not_commuting")["reason"] == "invalid_param"


class TestResultFiles:
    """results.csv and summary.json layout"""

    def test_results_csv(self, tmp_path):
        path = write_scenario(tmp_path, "commuting", COMMUTING)
        run_scenario(path, str(tmp_path / "out"))
        with open(tmp_path / "out" / "commuting" / "results.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0].keys()) == ["name", "value", "bound", "pass"]
        assert all(row["pass"] == "True" for row in rows)
        assert float(rows[0]["value"]) <= float(rows[0]["bound"])

    def test_diagnostics_json(self, tmp_path):
        path = write_scenario(tmp_path, "commuting", COMMUTING)
        run_scenario(path, str(tmp_path / "out"))
        with open(tmp_path / "out" / "commuting" / "diagnostics.json") as f:
            diagnostics = json.load(f)
        assert diagnostics["commutativity"]["pairs"] == [[0.5, 0.5]]

    def test_reruns_are_byte_identical(self, tmp_path):
        """Same file and seed give the same result files"""
        path = write_scenario(tmp_path, "commuting", COMMUTING)
        for out in ("first", "second"):
            assert run_scenario(path, str(tmp_path / out)) == EXIT_PASS
        for filename in ("results.csv", "summary.json"):
            first = (tmp_path / "first" / "commuting" / filename).read_bytes()
            assert first == (tmp_path / "second" / "commuting" / filename).read_bytes()

    def test_closed_form_row(self, tmp_path):
        """Rotation against translation matches 2 s |sin(t/2)| pair by pair"""
        text = NOT_COMMUTING.replace("ts = [0.5]", "ts = [0.25, 1.0]")
        text += 'expect = "noncommute"\nclosed_form = "rotation_translation"\n'
        path = write_scenario(tmp_path, "not_commuting", text)
        assert run_scenario(path, str(tmp_path / "out")) == EXIT_PASS
        rows = {row["name"]: row for row in read_summary(tmp_path / "out", "not_commuting")["checks"]}
        assert rows["closed_form"]["value"] <= 1e-6
        assert rows["gte_hypothesis_violated"]["pass"]


class TestMain:
    """argparse entry point"""

    def test_worst_code_wins(self, tmp_path, capsys):
        good = write_scenario(tmp_path, "commuting", COMMUTING)
        bad = write_scenario(tmp_path, "not_commuting", NOT_COMMUTING)
        assert main(["--out", str(tmp_path / "out"), "run", good, bad]) == EXIT_FAIL
        assert "Results saved to" in capsys.readouterr().out

    def test_bad_file_does_not_stop_the_batch(self, tmp_path):
        bad = write_scenario(tmp_path, "many", BLOW_UP.replace("samples = 10", 'samples = "many"'))
        good = write_scenario(tmp_path, "commuting", COMMUTING)
        assert main(["--out", str(tmp_path / "out"), "run", bad, good]) == EXIT_CONFIG
        assert read_summary(tmp_path / "out", "many")["reason"] == "invalid_param"
        assert read_summary(tmp_path / "out", "commuting")["pass"] is True

    def test_overrides_reach_the_scenario(self, tmp_path):
        path = write_scenario(tmp_path, "commuting", COMMUTING)
        scenario = load_scenario(path, {"dt": 0.05, "resolution": None, "seed": 3})
        assert scenario.params["dt"] == 0.05
        assert scenario.seed == 3
        assert "seed" not in scenario.params
        assert scenario.integrator().dt == 0.05

    def test_list_builtins(self, capsys):
        assert main(["list-builtins"]) == EXIT_PASS
        output = capsys.readouterr().out
        assert "rotation2d" in output
        assert "rings" in output

    def test_converge_needs_a_grid_scenario(self, tmp_path):
        path = write_scenario(tmp_path, "commuting", COMMUTING)
        assert main(["--out", str(tmp_path / "out"), "converge", path]) == EXIT_CONFIG

    def test_missing_command(self):
        with pytest.raises(SystemExit):
            main([])


class TestScenarioValidation:
    """Checks done while loading"""

    def test_negative_tolerance(self, tmp_path):
        path = write_scenario(tmp_path, "tol", COMMUTING + "\n[tolerances]\ncommute = -1.0\n")
        with pytest.raises(ConfigError):
            load_scenario(path)

    def test_missing_field(self, tmp_path):
        path = write_scenario(tmp_path, "missing", COMMUTING.replace('v = "dilation"\n', ""))
        with pytest.raises(ConfigError):
            load_scenario(path)

    def test_convergence_resolutions_are_powers_of_two(self, tmp_path):
        text = """
[scenario]
kind = "convergence"
dim = 2

[fields]
b = "rotation2d"
v = "windowed_constant"

[params]
base = "vae"
resolutions = [16, 24]
"""
        with pytest.raises(ConfigError):
            load_scenario(write_scenario(tmp_path, "conv", text))

    def test_induction_is_3d(self, tmp_path):
        text = """
[scenario]
kind = "alfven"
dim = 2

[fields]
V = "rotation2d"
B = "constant"
"""
        with pytest.raises(ConfigError):
            load_scenario(write_scenario(tmp_path, "alfven", text))

    def test_initial_chain_shapes(self, tmp_path):
        text = """
[scenario]
kind = "gte_invariance"
dim = 2

[fields]
b = "rotation2d"

[initial]
shape = "rings"
radii = [0.5, 1.0]
n = 64
"""
        scenario = load_scenario(write_scenario(tmp_path, "rings", text))
        assert len(scenario.chains["initial"]) == 2
        assert scenario.name == "rings"

    @pytest.mark.parametrize("scenario_file", sorted(os.listdir(os.path.join(os.path.dirname(__file__), "scenarios"))))
    def test_shipped_scenarios_load(self, scenario_file):
        load_scenario(os.path.join(os.path.dirname(__file__), "scenarios", scenario_file))

    def test_docstring_scenarios_exist(self):
        """Every scenario file named in the cli usage text is shipped"""
        here = os.path.dirname(__file__)
        named = re.findall(r"scenarios/\w+\.toml", cli.__doc__)
        assert named
        for relative in named:
            assert os.path.isfile(os.path.join(here, relative)), relative

    def test_flow_check_uses_default_step(self):
        scenario = load_scenario(os.path.join(os.path.dirname(__file__), "scenarios", "flow_density_bounds.toml"))
        assert "dt" not in scenario.params
        assert scenario.tol("inverse") == 1e-8


class TestConvergenceStudy:
    """Observed orders of the Eulerian solver"""

    def test_vae_study(self, tmp_path):
        text = """
[scenario]
kind = "convergence"
dim = 2

[fields]
b = "rotation2d"
v = { builtin = "constant", value = [1.0, 0.0], window = 0.8, window_center = [0.5, 0.0] }

[params]
base = "vae"
resolutions = [32, 64]
box = [-2.0, 2.0]
horizon = 0.5
dt = 1e-3
"""
        study = convergence_study(load_scenario(write_scenario(tmp_path, "study", text)))
        assert [row["resolution"] for row in study["rows"]] == [32, 64]
        assert study["rows"][0]["order"] == ""
        assert study["rows"][1]["h"] == pytest.approx(4.0 / 64)
        assert study["status"] == "ok"
        assert study["orders"][0] > 1.5

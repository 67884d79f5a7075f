"""Tests for the command-line interface."""

import json

import pytest
from click.testing import CliRunner

from cvlab.cli.main import cli
from cvlab.core.config import reload_settings
from cvlab.core.logger import configure_logging

DEGENERATE_CSV = "#kind=regression,d=2\nx1,x2,y\n1,0.5,1\n0,1,2\n0,2,1\n0,3,4\n0,4,3\n0,5,5\n"

SMOKE_CONFIG = """\
generator.family=bernoulli
generator.p1=0.9
n=10
rules=majority
schemes=vfold:5
replicates=5
master_seed=3
checks=smartness
n_list=1,2
expect_smart={expect}
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(autouse=True)
def detach_console_logging():
    """Handlers bound to the runner's streams are dropped after each command."""
    yield
    configure_logging(level="WARNING", console_output=False)


@pytest.fixture
def density_csv(runner, tmp_path):
    path = tmp_path / "density.csv"
    result = runner.invoke(
        cli,
        ["generate", "--param", "family=piecewise_density", "--param", "breakpoints=0,0.5,1",
         "--param", "densities=1.5,0.5", "--n", "40", "--seed", "7", "--out", str(path)],
    )
    assert result.exit_code == 0, result.output
    return path


class TestSplit:
    """Test the split command."""

    def test_leave_p_out(self, runner):
        """n = 4, p = 2 enumerates six splits."""
        result = runner.invoke(cli, ["split", "--n", "4", "--scheme", "lpo", "--p", "2"])
        assert result.exit_code == 0
        plan = json.loads(result.stdout)
        assert len(plan["splits"]) == 6
        assert "seed:" in result.stderr

    def test_vfold_not_regular(self, runner):
        """V = 2 does not divide n = 5."""
        result = runner.invoke(cli, ["split", "--n", "5", "--scheme", "vfold", "--v", "2", "--seed", "1"])
        assert result.exit_code == 0
        assert json.loads(result.stdout)["reg_exact"] is False

    def test_reruns_are_byte_identical(self, runner, tmp_path):
        """Same seed, same bytes."""
        outputs = []
        for name in ("a.json", "b.json"):
            target = tmp_path / name
            result = runner.invoke(cli, ["split", "--n", "30", "--plan", "mc:0.5:10", "--seed", "5", "--out", str(target)])
            assert result.exit_code == 0
            outputs.append(target.read_bytes())
        assert outputs[0] == outputs[1]

    def test_unwritable_output_exit_1(self, runner, tmp_path):
        """A write failure is reported like any other library error."""
        blocker = tmp_path / "blocker"
        blocker.write_text("x")
        result = runner.invoke(cli, ["split", "--n", "4", "--scheme", "loo", "--out", str(blocker / "plan.json")])
        assert result.exit_code == 1
        assert "error:" in result.stderr

    @pytest.mark.parametrize("args", [["--scheme", "vfold", "--v", "1"], ["--plan", "vfold"], ["--scheme", "lpo"]])
    def test_bad_plans_exit_2(self, runner, args):
        """Invalid plan options are usage errors."""
        result = runner.invoke(cli, ["split", "--n", "10", *args])
        assert result.exit_code == 2

    def test_budget_exceeded(self, runner, monkeypatch):
        """Leave-p-out beyond the budget is a configuration error."""
        monkeypatch.setenv("CVLAB_MAX_SPLITS", "10")
        reload_settings()
        result = runner.invoke(cli, ["split", "--n", "20", "--scheme", "lpo", "--p", "10"])
        assert result.exit_code == 2
        assert "184756" in result.stderr


class TestStartup:
    """Test settings checks when the command group starts."""

    def test_questionable_setting_is_logged(self, runner, monkeypatch):
        """A loadable but odd setting warns on stderr and the command still runs."""
        monkeypatch.setenv("CVLAB_STDERR_BAND", "0.5")
        reload_settings()
        result = runner.invoke(cli, ["split", "--n", "4", "--scheme", "loo"])
        assert result.exit_code == 0
        assert "stderr_band below 1" in result.stderr

    def test_default_settings_are_quiet(self, runner):
        """Defaults raise no settings warning."""
        result = runner.invoke(cli, ["split", "--n", "4", "--scheme", "loo"])
        assert "questionable setting" not in result.stderr


class TestEstimate:
    """Test the estimate command."""

    def test_corrected_by_default(self, runner, density_csv):
        """The report carries the corrected value and its parts."""
        result = runner.invoke(cli, ["estimate", "--data", str(density_csv), "--rule", "hist:1/4",
                                     "--scheme", "vfold", "--v", "5", "--seed", "1"])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.stdout)
        assert payload["criterion"] == "corrected"
        assert payload["rule"] == "hist:1/4"
        assert payload["contrast"] == "density_ls"
        assert payload["seed"] == 1
        assert len(payload["per_split"]) == 5

    def test_plain_cv_matches_slow_path(self, runner, density_csv):
        """--no-corrected reports CV; --slow gives the same numbers."""
        base = ["estimate", "--data", str(density_csv), "--rule", "hist:1/4", "--plan", "vfold:4",
                "--seed", "2", "--no-corrected"]
        fast = json.loads(runner.invoke(cli, base).stdout)
        slow = json.loads(runner.invoke(cli, [*base, "--slow"]).stdout)
        assert fast["criterion"] == "cv"
        assert fast["value"] == pytest.approx(slow["value"], abs=1e-12)

    def test_plan_file(self, runner, density_csv, tmp_path):
        """A plan written by split is reused verbatim."""
        plan_path = tmp_path / "plan.json"
        runner.invoke(cli, ["split", "--n", "40", "--plan", "vfold:8", "--seed", "3", "--out", str(plan_path)])
        result = runner.invoke(cli, ["estimate", "--data", str(density_csv), "--rule", "hist:1/2",
                                     "--plan-file", str(plan_path), "--no-corrected"])
        assert result.exit_code == 0
        assert len(json.loads(result.stdout)["per_split"]) == 8

    def test_unknown_rule_exit_2(self, runner, density_csv):
        """Unknown rule tokens are rejected before any work."""
        result = runner.invoke(cli, ["estimate", "--data", str(density_csv), "--rule", "lasso"])
        assert result.exit_code == 2

    def test_contrast_mismatch_exit_2(self, runner, density_csv):
        """A regression rule on density data is a configuration error."""
        result = runner.invoke(cli, ["estimate", "--data", str(density_csv), "--rule", "ols", "--plan", "vfold:5"])
        assert result.exit_code == 2

    def test_parse_error_exit_2(self, runner, tmp_path):
        """Malformed CSV reports the row."""
        path = tmp_path / "bad.csv"
        path.write_text("#kind=density,d=1\nx1\n0.5\nabc\n")
        result = runner.invoke(cli, ["estimate", "--data", str(path), "--rule", "hist:1"])
        assert result.exit_code == 2
        assert "row 4" in result.stderr

    def test_degenerate_design_exit_3(self, runner, tmp_path):
        """A leave-one-out fit without an identifiable coefficient is a numerical failure."""
        path = tmp_path / "degenerate.csv"
        path.write_text(DEGENERATE_CSV)
        result = runner.invoke(cli, ["estimate", "--data", str(path), "--rule", "ols", "--plan", "loo",
                                     "--no-corrected"])
        assert result.exit_code == 3


class TestSelect:
    """Test the select command."""

    def test_choice_in_menu(self, runner, density_csv):
        """The chosen identifier is one of the candidates."""
        result = runner.invoke(cli, ["select", "--data", str(density_csv), "--rule", "hist:1,hist:1/2",
                                     "--rule", "hist:1/4", "--procedure", "cv", "--plan", "vfold:5", "--seed", "0"])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.stdout)
        assert payload["chosen"] in {"hist:1", "hist:1/2", "hist:1/4"}
        assert payload["scheme"] == "vfold(V=5)"
        assert set(payload["criterion_values"]) == {"hist:1", "hist:1/2", "hist:1/4"}

    def test_penalized_needs_vfold(self, runner, density_csv):
        """Penalization on a hold-out plan is a scheme error."""
        result = runner.invoke(cli, ["select", "--data", str(density_csv), "--rule", "hist:1,hist:1/2",
                                     "--procedure", "penalized", "--plan", "holdout:20"])
        assert result.exit_code == 2


class TestConstants:
    """Test the constants command."""

    def test_vfold(self, runner):
        """C2(V=2, n=4) = 2.25."""
        result = runner.invoke(cli, ["constants", "--kind", "vf", "--v", "2", "--n", "4"])
        assert result.exit_code == 0
        assert json.loads(result.stdout)["C2"] == pytest.approx(2.25)

    def test_monte_carlo(self, runner):
        """One split at n_e = n/2."""
        result = runner.invoke(cli, ["constants", "--kind", "mc", "--v", "1", "--n", "1000000", "--ne", "500000"])
        assert json.loads(result.stdout)["C1"] == pytest.approx(12.0, rel=1e-5)

    def test_infinite_v(self, runner):
        """V = inf needs a training size."""
        assert runner.invoke(cli, ["constants", "--kind", "mc", "--v", "inf", "--n", "100"]).exit_code == 2
        result = runner.invoke(cli, ["constants", "--kind", "mc", "--v", "inf", "--n", "100", "--ne", "50"])
        assert json.loads(result.stdout)["V"] == "inf"

    def test_table(self, runner):
        """--table renders one row per V."""
        result = runner.invoke(cli, ["constants", "--kind", "vf", "--n", "100", "--table", "2,5,10"])
        assert result.exit_code == 0
        assert "C1" in result.stdout and "10" in result.stdout

    def test_bounds(self, runner):
        """V above n is out of bounds."""
        assert runner.invoke(cli, ["constants", "--kind", "vf", "--v", "11", "--n", "10"]).exit_code == 2


class TestExperiment:
    """Test the experiment command."""

    def test_smoke(self, runner, tmp_path):
        """A passing run writes the report and the tables."""
        config = tmp_path / "smoke.env"
        config.write_text(SMOKE_CONFIG.format(expect="false"))
        out_dir = tmp_path / "out"
        result = runner.invoke(cli, ["experiment", "--config", str(config), "--out-dir", str(out_dir)])
        assert result.exit_code == 0, result.output
        assert "PASS smartness" in result.stdout
        report = json.loads((out_dir / "report.json").read_text())
        assert report["replicates"] == 5
        assert report["checks"][0]["passed"] is True
        for name in ("criteria", "increments", "biases", "risks", "replicates", "check_smartness"):
            assert (out_dir / f"{name}.csv").is_file()

    def test_same_report_whatever_the_jobs(self, runner, tmp_path):
        """Thread count does not change the report."""
        config = tmp_path / "smoke.env"
        config.write_text(SMOKE_CONFIG.format(expect="false"))
        reports = []
        for jobs in ("1", "3"):
            out_dir = tmp_path / f"jobs{jobs}"
            runner.invoke(cli, ["experiment", "--config", str(config), "--out-dir", str(out_dir), "--jobs", jobs])
            reports.append((out_dir / "report.json").read_bytes())
        assert reports[0] == reports[1]

    def test_failed_check_exit_4(self, runner, tmp_path):
        """A failing check sets exit code 4."""
        config = tmp_path / "smoke.env"
        config.write_text(SMOKE_CONFIG.format(expect="true"))
        result = runner.invoke(cli, ["experiment", "--config", str(config), "--out-dir", str(tmp_path / "out")])
        assert result.exit_code == 4
        assert "FAIL smartness" in result.stdout

    def test_invalid_config_exit_2(self, runner, tmp_path):
        """Invalid experiment files are configuration errors."""
        config = tmp_path / "bad.env"
        config.write_text("generator.family=bernoulli\ngenerator.p1=0.9\nn=10\nrules=ols\nreplicates=5\n")
        result = runner.invoke(cli, ["experiment", "--config", str(config), "--out-dir", str(tmp_path / "out")])
        assert result.exit_code == 2


class TestGenerate:
    """Test the generate command."""

    def test_writes_csv(self, density_csv):
        """Density files start with the kind line."""
        assert density_csv.read_text().startswith("#kind=density")

    def test_bad_param_exit_2(self, runner, tmp_path):
        """Parameters must be key=value and describe a valid law."""
        out = str(tmp_path / "x.csv")
        assert runner.invoke(cli, ["generate", "--param", "family", "--n", "5", "--out", out]).exit_code == 2
        result = runner.invoke(cli, ["generate", "--param", "family=bernoulli", "--param", "p1=1.5",
                                     "--n", "5", "--out", out])
        assert result.exit_code == 2

import json
import re
import subprocess
import sys

import pytest

from mobility_equity.cli import build_parser, run


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    out = tmp_path_factory.mktemp("scn") / "s"
    assert run(["gen", "--seed", "1", "--grid", "3", "--out", str(out)]) == 0
    return out


def summary_mem(text):
    return float(re.search(r"MEM=([0-9.]+)", text).group(1))


def test_gen_then_eval(scenario, tmp_path, capsys):
    assert run(["eval-mem", "--scenario", str(scenario), "--weights", "0.5,0.5", "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out
    assert 0 <= summary_mem(line) <= 1
    assert "delta_pv=" in line and "gap=" in line
    assert sorted(p.name for p in tmp_path.iterdir()) == ["access.csv", "metadata.json", "mi.csv"]


def test_optimize_prints_best_weights(scenario, tmp_path, capsys):
    assert run(["optimize", "--scenario", str(scenario), "--lambda", "inf", "--grid-res", "11", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("best weights public=")
    assert len((tmp_path / "grid.csv").read_text().splitlines()) == 12


def test_missing_scenario_is_validation_error(tmp_path, capsys):
    assert run(["solve", "--scenario", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [[], ["frobnicate"], ["solve"], ["solve", "--scenario", "x", "--bogus"], ["sweep", "--scenario", "x", "--axis", "time"], ["solve", "--scenario", "x", "--rho", "2"]],
)
def test_usage_errors_exit_one(argv, capsys):
    assert run(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_override_is_validation_error(scenario, tmp_path, capsys):
    assert run(["eval-mem", "--scenario", str(scenario), "--weights", "0.5", "--out", str(tmp_path)]) == 2
    assert "weights" in capsys.readouterr().err


def test_solver_failure_exits_three(scenario, tmp_path, capsys, monkeypatch):
    from mobility_equity import cli
    from mobility_equity.optimizer import InfeasibleError

    def infeasible(*args, **kwargs):
        raise InfeasibleError(0.5, 2.0)

    monkeypatch.setattr(cli, "maximize_mem", infeasible)
    assert run(["optimize", "--scenario", str(scenario), "--lambda", "0.5", "--out", str(tmp_path)]) == 3
    assert "delta_pv <= 0.5" in capsys.readouterr().err


def test_overrides_recorded(scenario, tmp_path):
    argv = ["solve", "--scenario", str(scenario), "--out", str(tmp_path), "--rho", "0.6", "--L", "3", "--k", "exact",
            "--model", "wardrop", "--lambda", "5", "--weights", "public=0.7,private=0.3"]
    assert run(argv) == 0
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["overrides"] == {
        "compliance_rate": 0.6,
        "hierarchy_depth": 3,
        "lambda": 5.0,
        "noncompliant_model": "wardrop",
        "smoothing_k": None,
        "weights": {"private": 0.3, "public": 0.7},
    }
    assert meta["config"]["compliance_rate"] == 0.6 and meta["config"]["smoothing_k"] is None
    flows = (tmp_path / "flows.csv").read_text().splitlines()[0]
    assert flows == "edge,tail,head,flow_public_vph,flow_private_vph,noncompliant_vph,total_vph,time_min"


def test_help_documents_every_flag_and_column(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text
            assert action.help, f"{name} {action.dest} lacks help"
        for column in ("node_id", "sigma_normalized", "noncompliant_vph", "delta_pv_min", "distance_to_wardrop_vph", "improvement", "feasible"):
            assert column in text
    with pytest.raises(SystemExit) as info:
        parser.parse_args(["--help"])
    assert info.value.code == 0


@pytest.mark.parametrize("axis", ["weight", "compliance", "hierarchy"])
def test_sweeps_are_byte_deterministic(scenario, tmp_path, axis):
    extra = {"weight": ["--steps", "3"], "compliance": ["--values", "0.5,0.9"], "hierarchy": ["--values", "0,2"]}[axis]
    for d in ("a", "b"):
        assert run(["sweep", "--scenario", str(scenario), "--axis", axis, "--svg", "--out", str(tmp_path / d)] + extra) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_output_directory_from_environment(scenario, tmp_path, monkeypatch):
    monkeypatch.setenv("MOBILITY_EQUITY_OUT", str(tmp_path / "env"))
    assert run(["eval-mem", "--scenario", str(scenario)]) == 0
    assert (tmp_path / "env" / "mi.csv").exists()


def test_module_entry_point(scenario, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mobility_equity", "eval-mem", "--scenario", str(scenario), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("MEM=")

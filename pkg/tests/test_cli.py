import json
import shutil
import subprocess
import sys

import pytest

from sir_opticon.cli import ConfigError, load_scenario, run
from sir_opticon.synthesis import optimal_open_loop

CFG = """\
beta_star = 0.08
beta = 0.16
gamma = 0.06
i_M = 0.02
lambda1 = 0
lambda2 = 1
s0 = {s0}
i0 = {i0}
t_f = 500
tol = 1e-9
seed = 7
"""


def write_cfg(tmp_path, s0=0.85, i0=0.001, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(CFG.format(s0=s0, i0=i0) + extra)
    return path


def test_load_bundled():
    sc = load_scenario("scenario2")
    assert sc.state0.s == 0.85 and sc.seed == 7


def test_defaults_fill_optional_keys(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("beta_star=0.08\nbeta=0.16\ngamma=0.06\ni_M=0.02\ns0=0.7\ni0=0.001\nt_f=500\n")
    sc = load_scenario(path)
    assert sc.weights.lambda1 == 0.0 and sc.weights.lambda2 == 1.0
    assert sc.tol == 1e-9 and sc.seed == 0


@pytest.mark.parametrize("extra, message", [
    ("bogus = 1\n", "unknown"),
    ("t_f = -1\n", "t_f"),
])
def test_bad_configs(tmp_path, extra, message):
    text = CFG.format(s0=0.7, i0=0.001)
    if extra.startswith("t_f"):
        text = text.replace("t_f = 500\n", extra)
    else:
        text += extra
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=message):
        load_scenario(path)


def test_missing_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text(CFG.format(s0=0.7, i0=0.001).replace("gamma = 0.06\n", ""))
    with pytest.raises(ConfigError, match="gamma"):
        load_scenario(path)
    assert run(["zones", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_zones_stage(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert run(["zones", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["zones"]["label"] == "InB_NotB0"
    lines = (tmp_path / "zones.csv").read_text().splitlines()
    assert lines[0].startswith("s,phi_A,phi_B")
    assert len(lines) == 1002


def test_infeasible_start(tmp_path, capsys):
    cfg = write_cfg(tmp_path, s0=0.9, i0=0.05)
    assert run(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "infeasible initial state" in capsys.readouterr().err


def test_verify_needs_trajectory(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert run(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "missing trajectory" in capsys.readouterr().err


def test_synth_then_verify(tmp_path, params):
    cfg = write_cfg(tmp_path, s0=0.7)
    assert run(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert run(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["verification"]["passed"]
    assert rep["synthesis"]["structure"] == "bang-boundary-bang"
    traj = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert traj[0] == "t,s,i,b"


@pytest.fixture(scope="module")
def all_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("all")
    cfg = write_cfg(out)
    assert run(["all", "--config", str(cfg), "--out", str(out)]) == 0
    return out, cfg


def test_all_outputs(all_run):
    out, _ = all_run
    for name in ("zones.csv", "trajectory.csv", "synthesis.json", "costates.csv",
                 "costates.json", "baseline.csv", "report.json", "plot.svg"):
        assert (out / name).exists(), name
    assert (out / "plot.svg").read_text().startswith("<svg")


def test_report_cost_is_analytic(all_run, params, weights):
    out, _ = all_run
    rep = json.loads((out / "report.json").read_text())
    res = optimal_open_loop(load_scenario(out / "run.cfg").state0, 500.0, params, weights)
    assert rep["synthesis"]["cost"] == res.cost
    assert rep["baseline"]["relative_gap"] >= -0.005


def test_rerun_is_byte_identical(all_run, tmp_path):
    out, cfg = all_run
    assert run(["all", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    for name in ("zones.csv", "trajectory.csv", "synthesis.json", "costates.csv",
                 "costates.json", "baseline.csv", "report.json"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_costates_show_two_jumps(all_run):
    out, _ = all_run
    rows = [line.split(",") for line in (out / "costates.csv").read_text().splitlines()[1:]]
    times = [r[0] for r in rows]
    assert len(times) - len(set(times)) == 2


@pytest.mark.skipif(shutil.which("sir-opticon") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["sir-opticon", "zones", "--config", "scenario1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "zones.csv").exists()


def test_module_help():
    proc = subprocess.run([sys.executable, "-m", "sir_opticon.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "zones" in proc.stdout

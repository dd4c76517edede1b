import json
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from iosim.cli import main
from iosim.errors import ConfigError
from iosim.scenario import Scenario

SCEN = Path(__file__).resolve().parents[1] / "scenarios"


def _run(tmp_path, name, *extra, sub=None, out="out"):
    sub = sub or name.split("_")[0]
    return main([sub, "--scenario", str(SCEN / f"{name}.yaml"), "--out", str(tmp_path / out), *extra])


def _write(tmp_path, data, name="s.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def _numeric_files(d):
    return {f.name: f.read_bytes() for f in sorted(Path(d).iterdir()) if f.name != "manifest.json"}


# -- schema ------------------------------------------------------------------

def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="bogus"):
        Scenario.from_dict({"bogus": 1})


def test_unknown_nested_key_has_path():
    with pytest.raises(ConfigError) as e:
        Scenario.from_dict({"budget": {"noise_dbm": -96, "oops": 1}}).budget()
    assert "budget" in str(e.value)


def test_seed_must_be_integer():
    with pytest.raises(ConfigError):
        Scenario.from_dict({"seed": 1.5})


def test_every_shipped_scenario_loads():
    for p in sorted(SCEN.glob("*.yaml")):
        Scenario.load(p)


# -- exit codes ------------------------------------------------------------

def test_empty_frequency_list_exit_2(tmp_path):
    p = _write(tmp_path, {"sweeps": {"frequency": {"list_ghz": []}}})
    assert main(["scatter", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2


def test_missing_scenario_file_exit_2(tmp_path):
    assert main(["scatter", "--scenario", str(tmp_path / "none.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_target_outside_sweep_exit_3(tmp_path):
    d = yaml.safe_load((SCEN / "pattern_subarray.yaml").read_text())
    d["sweeps"]["pattern"] = {"start_deg": 60, "stop_deg": 180, "step_deg": 1, "observation_m": 0.97}
    d["pattern"]["targets_deg"] = [300]
    p = _write(tmp_path, d)
    assert main(["pattern", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 3


def test_exhaustive_beyond_bound_exit_4(tmp_path):
    d = yaml.safe_load((SCEN / "optimize_reflection.yaml").read_text())
    d["grouping"] = {"mode": "rows"}
    d["optimize"] = {"baseline": False}
    p = _write(tmp_path, d)
    assert main(["optimize", "--scenario", str(p), "--out", str(tmp_path / "o"), "--solver", "exhaustive"]) == 4


def test_testbed_small_u_exit_2(tmp_path):
    d = yaml.safe_load((SCEN / "testbed.yaml").read_text())
    d["testbed"]["U"] = 1
    p = _write(tmp_path, d)
    assert main(["testbed", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2


def test_fit_bad_csv_reports_line(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("freq_hz,state,theta_deg,phi_deg,re_gr,im_gr,re_gt,im_gt\n"
                                    "3.6e9,OFF,0,0,0.1,0.2,0.3,zz\n")
    p = _write(tmp_path, {"fit": {"targets": "t.csv"}})
    assert main(["fit", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_fit_bounds_excluding_init_exit_2(tmp_path):
    p = _write(tmp_path, {"fit": {"synthesize": {"start_ghz": 3.59, "stop_ghz": 3.61, "points": 11},
                                  "bounds": {"l2": [1.0, 2.0]}}})
    assert main(["fit", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2


def test_fit_budget_zero(tmp_path):
    p = _write(tmp_path, {"fit": {"synthesize": {"start_ghz": 3.59, "stop_ghz": 3.61, "points": 11},
                                  "perturb": 1.05, "budget": 0}})
    assert main(["fit", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "fit_report.json").read_text())
    assert rep["converged"] is False
    assert rep["residual"] == rep["initial_residual"]


def test_fit_synthesize_non_numeric(tmp_path):
    p = _write(tmp_path, {"fit": {"synthesize": {"start_ghz": "a", "stop_ghz": 3.61, "points": 11}}})
    assert main(["fit", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("IOS_SIM_THREADS", "zero")
    assert _run(tmp_path, "scatter_normal") == 2
    monkeypatch.setenv("IOS_SIM_THREADS", "2")
    assert _run(tmp_path, "scatter_normal") == 0
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["threads"] == 2


# -- subcommands ---------------------------------------------------------

def test_scatter_energy_row(tmp_path):
    assert _run(tmp_path, "scatter_normal") == 0
    s = json.loads((tmp_path / "out" / "scatter_summary.json").read_text())
    assert abs(s["energy_state0"] - 0.55) <= 0.05


def test_pattern_single_element(tmp_path):
    d = yaml.safe_load((SCEN / "pattern_subarray.yaml").read_text())
    d["layout"] = {"rows": 1, "cols": 1, "row_pitch_cm": 1.42, "col_pitch_cm": 2.87}
    d["tx"] = d["tx"][:1]
    d["pattern"]["targets_deg"] = [141]
    p = _write(tmp_path, d)
    assert main(["pattern", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 0
    m = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert m["141.0"]["angle_aware"]["sll_db"] == "no-sidelobe"


def test_manifest_contents(tmp_path):
    assert _run(tmp_path, "scatter_normal", "--seed", "5") == 0
    m = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert m["seed"] == 5
    assert set(m["outputs"]) == {"scatter.csv", "scatter_polar.csv", "scatter_summary.json"}
    assert len(m["scenario_sha256"]) == 64


@pytest.mark.parametrize("name", ["scatter_normal", "scatter_angles", "fit_roundtrip", "pattern_angle_effect",
                                  "optimize_reflection", "testbed"])
def test_determinism(tmp_path, name):
    assert _run(tmp_path, name, out="a") == 0
    assert _run(tmp_path, name, out="b") == 0
    a, b = _numeric_files(tmp_path / "a"), _numeric_files(tmp_path / "b")
    assert a == b and a
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["scenario_sha256"] == mb["scenario_sha256"]
    assert ma["outputs"] == mb["outputs"]


def test_seed_changes_testbed_output(tmp_path):
    assert _run(tmp_path, "testbed", "--seed", "1", out="a") == 0
    assert _run(tmp_path, "testbed", "--seed", "2", out="b") == 0
    a = (tmp_path / "a" / "channel_estimates.csv").read_bytes()
    b = (tmp_path / "b" / "channel_estimates.csv").read_bytes()
    assert a != b


def test_optimize_outputs(tmp_path):
    assert _run(tmp_path, "optimize_reflection") == 0
    sol = json.loads((tmp_path / "out" / "solution.json").read_text())
    assert sol["solution"]["objective"] > sol["no_ios"]["objective"]
    assert len(sol["solution"]["s"]) == 16
    rates = (tmp_path / "out" / "rates.csv").read_text().splitlines()
    assert len(rates) >= 2


def test_testbed_noiseless_exact(tmp_path):
    d = yaml.safe_load((SCEN / "testbed.yaml").read_text())
    d["testbed"].update(snr_db=float("inf"), U=2, closed_loop=False)
    del d["testbed"]["noise_runs"]
    p = _write(tmp_path, d)
    assert main(["testbed", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "testbed_report.json").read_text())
    assert rep["channel_rms_rel_error"] < 1e-12

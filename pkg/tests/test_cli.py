import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from aclab.cli import algebra_query, main, resolve_config
from aclab.fields import GridField, GridSpec, TestFunction, read_field, test_pair


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


SIM = {"grid": {"d": 1, "T": 0.25, "n_t": 32, "n_x": 16},
       "noise": {"seed": 3, "delta": 0.25},
       "equation": {"C": 1.0, "eps": 0.1, "renormalised": False}}


def test_simulate_writes_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", _write(tmp_path, SIM), "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"config.resolved.json", "summary.json", "manifest.json", "trajectory.bin", "terminal.csv"} <= names
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and "trajectory.bin" in manifest["outputs"]
    assert "timestamp" not in json.dumps(manifest)
    assert read_field(out / "trajectory.bin").values.shape == (33, 16)


def test_zero_noise_from_zero_data_is_zero(tmp_path):
    cfg = {"grid": {"d": 2, "T": 0.25, "n_t": 16, "n_x": 8}, "equation": {"C": 1.0}}
    out = tmp_path / "o"
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    assert not read_field(out / "trajectory.bin").values.any()


def test_reproducible_bytes(tmp_path):
    path = _write(tmp_path, SIM)
    for name in ("a", "b"):
        assert main(["simulate", "--config", path, "--out", str(tmp_path / name)]) == 0
    for f in ("trajectory.bin", "terminal.csv", "summary.json", "manifest.json", "config.resolved.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_precedence(tmp_path):
    raw = {"grid": {"d": 1}, "noise": {"seed": 5}}
    assert resolve_config(raw, None, env={})["noise"]["seed"] == 5
    assert resolve_config(raw, None, env={"ACLAB_SEED": "9"})["noise"]["seed"] == 9
    assert resolve_config(raw, 11, env={"ACLAB_SEED": "9"})["noise"]["seed"] == 11
    filled = resolve_config({"grid": {"d": 2}}, None, env={})
    assert filled["grid"]["n_x"] == 32 and filled["equation"]["eps"] == 0.0 and filled["noise"]["seed"] == 0


@pytest.mark.parametrize("cfg", [
    {"grid": {"d": 1}, "bogus": 1},
    {"grid": {"d": 1, "nx": 8}},
    {"grid": {"d": 4}},
    {"grid": {"d": 1}, "noise": {"delta": 0.1, "schedule": {"lambda": 1.0}}},
])
def test_invalid_configs_exit_2(tmp_path, cfg, capsys):
    out = tmp_path / "o"
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 2
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["status"] == "invalid"
    assert "invalid" in capsys.readouterr().err


def test_unresolvable_schedule_exit_2(tmp_path):
    cfg = {"grid": {"d": 2, "T": 0.25, "n_t": 64, "n_x": 16},
           "noise": {"schedule": {"lambda": 1.0}}, "equation": {"eps": 0.1}}
    out = tmp_path / "o"
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 2
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["error"] == "ResolutionError" and diag["min_eps"] > 0.1


def test_blowup_exit_3(tmp_path):
    cfg = {"grid": {"d": 1, "T": 1.0, "n_t": 64, "n_x": 8}, "equation": {"C": 4.0},
           "run": {"u0": 0.5, "blowup_threshold": 1.5}}
    out = tmp_path / "o"
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 3
    assert json.loads((out / "diagnostics.json").read_text())["status"] == "numerical_failure"


def test_minimize_action_success_and_failure(tmp_path):
    cfg = {"grid": {"d": 1, "T": 0.25, "n_t": 32, "n_x": 16}, "equation": {"C": 1.0},
           "run": {"target": {"kind": "cosine", "value": 0.5}}}
    out = tmp_path / "ok"
    assert main(["minimize-action", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["success"] and s["action"] > 0 and s["misfit"] < 0.05
    cfg["run"]["maxiter"] = 1
    out = tmp_path / "bad"
    assert main(["minimize-action", "--config", _write(tmp_path, cfg, "b.json"), "--out", str(out)]) == 3
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["details"]["success"] is False


def test_renorm_constants_log_slope(tmp_path):
    cfg = {"grid": {"d": 2, "T": 0.25}, "run": {"deltas": [2.0**-k for k in range(4, 8)]}}
    out = tmp_path / "o"
    assert main(["renorm-constants", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "constants.csv").open()))
    diffs = np.array([float(r["c1_diff"]) for r in rows[1:]])
    assert np.all(np.abs(diffs / (math.log(2) / (4 * math.pi)) - 1) < 0.05)
    assert main(["renorm-constants", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "j"),
                 "--format", "json"]) == 0
    assert len(json.loads((tmp_path / "j" / "constants.json").read_text())) == 4


def test_model_check(tmp_path):
    cfg = {"grid": {"d": 2, "T": 0.25, "n_t": 32, "n_x": 32}, "noise": {"delta": 0.25, "seed": 1},
           "run": {"samples": 20, "symbol": "<2>", "test_scale": 0.25, "test_center": [0.125, 0.5, 0.5]}}
    out = tmp_path / "o"
    assert main(["model-check", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    row = next(csv.DictReader((out / "model_check.csv").open()))
    ones = test_pair(GridField.constant(GridSpec(2, 0.25, 32, 32), 1.0), TestFunction((0.125, 0.5, 0.5), 0.25))
    shift = float(row["raw_mean"]) - float(row["renormalised_mean"])
    assert shift == pytest.approx(float(row["c1"]) * ones, rel=1e-9)
    cfg["run"]["symbol"] = "<22>"
    assert main(["model-check", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "x")]) == 2


def test_ldp_scan(tmp_path):
    cfg = {"grid": {"d": 1, "T": 0.25, "n_t": 32, "n_x": 16}, "equation": {"C": -1.0},
           "run": {"event": {"kind": "terminal_l2_exit", "threshold": 0.4}, "eps_list": [0.25, 0.2],
                   "trials": 300, "estimator": "tilted"}}
    out = tmp_path / "o"
    assert main(["ldp-scan", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "ldp_table.csv").open()))
    assert len(rows) == 2 and all(float(r["p_hat"]) > 0 for r in rows)
    assert json.loads((out / "summary.json").read_text())["verdict"] in ("consistent", "inconsistent")
    assert "instanton action" in (out / "rate_report.txt").read_text()


def test_algebra_queries(tmp_path):
    lines = algebra_query("W_minus d=3")
    assert len(lines) == 7
    assert algebra_query("coproduct <22>") == ["<22>⊗1 + <2>⊗J(<2>)"]
    out = tmp_path / "o"
    assert main(["algebra", "--query", "W_minus d=2", "--out", str(out)]) == 0
    assert main(["algebra", "--query", "nonsense", "--out", str(tmp_path / "x")]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "aclab", "algebra", "--query", "W_minus d=3", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert len([ln for ln in r.stdout.splitlines() if ln.strip()]) == 7

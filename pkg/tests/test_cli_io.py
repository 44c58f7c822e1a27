import csv
import json

import jsonschema
import numpy as np
import pytest

from harmonic_ness import cli, verify
from harmonic_ness.io import config_hash, format_value, validate_config, write_csv

BASE = {"model": {"s": 0.5, "N": 3, "rho_l": 0.0, "rho_r": 1.0}, "seed": 3}


def run_cmd(tmp_path, cmd, config, tag=None, *extra):
    path = tmp_path / f"{tag or cmd}.json"
    path.write_text(json.dumps(config))
    out = tmp_path / (tag or cmd)
    code = cli.main([cmd, "--config", str(path), "--out", str(out), *extra])
    return code, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_format_and_csv_layout(tmp_path):
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(3) == "3" and format_value(True) == "true"
    p = write_csv(tmp_path / "t.csv", ["a", "b"], [(1, 0.5), (2, "x,y")], "abc")
    raw = p.read_bytes()
    assert raw.startswith(b"a,b,config_hash\r\n")
    assert b'"x,y"' in raw
    assert config_hash({"b": 1, "a": [1.0]}) == config_hash({"a": [1.0], "b": 1})


def test_schema_rejects_bad_configs():
    validate_config(BASE)
    with pytest.raises(jsonschema.ValidationError):
        validate_config({"model": {"s": 0.5, "N": 0, "rho_l": 0.0, "rho_r": 1.0}})
    with pytest.raises(jsonschema.ValidationError):
        validate_config({**BASE, "unknown": 1})


def test_simulate_deterministic_and_hashed(tmp_path):
    cfg = {**BASE, "simulate": {"events": 20000}}
    code, out1 = run_cmd(tmp_path, "simulate", cfg, "a")
    code2, out2 = run_cmd(tmp_path, "simulate", cfg, "b")
    assert code == code2 == 0
    b1 = (out1 / "simulate_stats.csv").read_bytes()
    assert b1 == (out2 / "simulate_stats.csv").read_bytes()
    rows = read_csv(out1 / "simulate_stats.csv")
    assert list(rows[0]) == ["site", "mean", "var", "hist_bin", "hist_mass", "config_hash"]
    summ = json.loads((out1 / "simulate_summary.json").read_text())
    assert {r["config_hash"] for r in rows} == {summ["config_hash"]}
    resolved = json.loads((out1 / "resolved_config.json").read_text())
    assert resolved["config"]["simulate"]["burn_in"] == 0.2


def test_replicas_change_output(tmp_path):
    one = {**BASE, "simulate": {"events": 5000, "replicas": 1}}
    two = {**BASE, "simulate": {"events": 5000, "replicas": 2}}
    _, o1 = run_cmd(tmp_path, "simulate", one, "one")
    _, o2 = run_cmd(tmp_path, "simulate", two, "two")
    s1 = json.loads((o1 / "simulate_summary.json").read_text())
    s2 = json.loads((o2 / "simulate_summary.json").read_text())
    assert s2["events"] == 2 * s1["events"] and s2["replicas"] == 2


def test_reflection_requires_flag(tmp_path, capsys):
    cfg = {"model": {"s": 0.5, "N": 2, "rho_l": 0.8, "rho_r": 0.2}, "ness": {"marginal_cap": 5}}
    code, _ = run_cmd(tmp_path, "ness", cfg, "r1")
    assert code == 2 and "allow-reflect" in capsys.readouterr().err
    code, out = run_cmd(tmp_path, "ness", cfg, "r2", "--allow-reflect")
    assert code == 0
    mean = [float(r["mean"]) for r in read_csv(out / "ness_mean_profile.csv")]
    assert mean == pytest.approx([0.6, 0.4])


def test_ness_outputs(tmp_path):
    cfg = {"model": {"s": 1.0, "N": 2, "rho_l": 0.0, "rho_r": 1.0},
           "ness": {"moment_cap": 2, "marginal_cap": 5, "states": [[0, 0], [1, 2]]}}
    code, out = run_cmd(tmp_path, "ness", cfg)
    assert code == 0
    mom = read_csv(out / "ness_moments.csv")
    g = {(int(r["xi_1"]), int(r["xi_2"])): float(r["G"]) for r in mom}
    assert g[(0, 0)] == pytest.approx(1.0)
    assert g[(1, 1)] == pytest.approx(5 / 21, rel=1e-12)
    mean = [float(r["mean"]) for r in read_csv(out / "ness_mean_profile.csv")]
    assert np.diff(mean) == pytest.approx([2 / 3])
    eq = json.loads((out / "ness_equivalence.json").read_text())
    assert eq["max_gap"] < 1e-8
    states = read_csv(out / "ness_states.csv")
    assert len(states) == 2 and 0 < float(states[0]["mu"]) < 1


def test_mgf_and_pressure_json_format(tmp_path):
    cfg = {**BASE, "format": "json", "mgf": {"fields": [[0.1, -0.2, 0.0]]},
           "pressure": {"fields": [-1.0], "trend_N": [4], "optimizer": {"M": 60, "starts": 2}}}
    code, out = run_cmd(tmp_path, "mgf", cfg)
    assert code == 0
    doc = json.loads((out / "mgf_values.json").read_text())
    vals = [r[2] for r in doc["rows"]]
    assert max(vals[:3]) - min(vals[:3]) < 1e-8
    code, out = run_cmd(tmp_path, "pressure", cfg)
    assert code == 0
    rows = json.loads((out / "pressure_values.json").read_text())["rows"]
    assert rows[0][3] < 1e-4


def test_ldf_and_additivity(tmp_path):
    cfg = {**BASE, "ldf": {"optimizer": {"M": 60, "starts": 2}},
           "additivity": {"splits": [0.5], "optimizer": {"M": 40}}}
    code, out = run_cmd(tmp_path, "ldf", cfg)
    assert code == 0
    assert abs(json.loads((out / "ldf_value.json").read_text())["value"]) < 1e-8
    cfg["model"] = {"s": 0.5, "N": 3, "rho_l": 0.2, "rho_r": 0.8}
    code, out = run_cmd(tmp_path, "additivity", cfg)
    assert code == 0
    rep = json.loads((out / "additivity_report.json").read_text())
    assert rep["gap"] < 1e-8 and len(rep["optimizers"]) == 1


def test_invalid_config_exit_code(tmp_path, capsys):
    code, _ = run_cmd(tmp_path, "simulate", {"model": {"s": -1, "N": 2, "rho_l": 0, "rho_r": 1}})
    assert code == 2
    assert cli.main(["simulate", "--seed", "-1", "--config", "x.json"]) == 2


def test_verify_single_check(tmp_path, capsys):
    code = cli.main(["verify", "--check", "rate_identity", "--out", str(tmp_path / "v")])
    assert code == 0
    assert capsys.readouterr().out.startswith("PASS rate_identity")
    rep = json.loads((tmp_path / "v" / "verify_report.json").read_text())
    assert rep["passed"] and len(rep["checks"]) == 1


def test_verify_failure_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setitem(verify.CHECKS, "rate_identity",
                        lambda: verify.CheckResult("rate_identity", False, 1.0, 1e-12))
    code = cli.main(["verify", "--check", "rate_identity", "--out", str(tmp_path / "v")])
    assert code == 1
    assert "FAIL rate_identity" in capsys.readouterr().out

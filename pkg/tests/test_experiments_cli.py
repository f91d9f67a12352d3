from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import UNRATE
from stresspath import cli
from stresspath.dgp import DgpConfig, replication_rng, simulate
from stresspath.experiments import (ExperimentConfig, ExperimentError, RunManifest, layer2_setup,
                                    rerun_from_manifest, run_experiment)
from stresspath.identification import SensitivitySpec
from stresspath.learner import LearnerSpec
from stresspath.macro import ScenarioSpec, load_macro_csv
from stresspath.report import REPORT_COLUMNS, ReportConfig, run_report, write_report
from stresspath.tables import read_csv

TINY_1D = dict(replications=1, n_units=300, n_mc=50)


def _csvs(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


def test_config_validation():
    with pytest.raises(ExperimentError):
        ExperimentConfig("9z")
    cfg = ExperimentConfig("1d", seed=3, **TINY_1D)
    assert ExperimentConfig.from_dict(cfg.to_dict()).hash() == cfg.hash()
    assert ExperimentConfig("1d", seed=4, **TINY_1D).hash() != cfg.hash()


def test_1d_table_and_manifest(tmp_path):
    m, res = run_experiment(ExperimentConfig("1d", **TINY_1D), tmp_path)
    rows = res.table("exp1d")
    assert len(rows) == 5 and all(r["in_set"] for r in rows)
    cols, _ = read_csv(tmp_path / "exp1d.csv")
    assert cols[:7] == ["gamma_A", "gamma_Y", "tau_obs_true", "tau_do", "abs_gap", "two_abs_gap", "in_set"]
    assert all(c.endswith(("_se", "_seed")) for c in cols[7:])
    loaded = RunManifest.load(tmp_path / "manifest.json")
    assert loaded.config_hash == m.config_hash and "exp1d.csv" in [a["file"] for a in loaded.artifacts]
    assert (tmp_path / "exp1d.png").exists()


def test_same_config_byte_identical(tmp_path):
    cfg = ExperimentConfig("1d", seed=5, **TINY_1D)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    assert _csvs(tmp_path / "a") == _csvs(tmp_path / "b")
    rerun_from_manifest(tmp_path / "a" / "manifest.json", tmp_path / "c")
    assert _csvs(tmp_path / "a") == _csvs(tmp_path / "c")
    assert (tmp_path / "a" / "exp1d.png").read_bytes() == (tmp_path / "c" / "exp1d.png").read_bytes()


def test_layer2_requires_macro():
    with pytest.raises((ExperimentError, FileNotFoundError)):
        run_experiment(ExperimentConfig("2d", replications=1), None)


def test_layer2_replays_series():
    l2 = layer2_setup(load_macro_csv(UNRATE))
    cfg = l2.config(50, l2.t("2018-12-01"), 12)
    p = l2.simulate(cfg, replication_rng(0))
    assert np.allclose(p.macro[1:], l2.series.values)


# --- CLI -------------------------------------------------------------------


def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main(["bogus"]) == 2
    assert cli.main(["exp", "2d", "--out", str(tmp_path)]) == 2
    assert cli.main(["exp", "--out", str(tmp_path)]) == 2
    assert cli.main(["report", "--out", str(tmp_path), "--scenario", "x.json"]) == 2  # c1, phi-u required


def test_cli_io_errors(tmp_path):
    assert cli.main(["exp", "2d", "--out", str(tmp_path), "--macro-csv", str(tmp_path / "none.csv")]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("date,value\n2000-01-01,4\n2000-03-01,4\n")
    assert cli.main(["sim", "--out", str(tmp_path), "--macro-csv", str(bad)]) == 3


def test_cli_sim_and_report(tmp_path, capsys):
    (tmp_path / "dgp.json").write_text(json.dumps({"n_units": 150}))
    assert cli.main(["sim", "--config", str(tmp_path / "dgp.json"), "--out", str(tmp_path), "--seed", "2"]) == 0
    scen = tmp_path / "s.json"
    scen.write_text(json.dumps({"kind": "ksigma", "H": 4, "k": 1.0}))
    rc = cli.main(["report", "--panel", str(tmp_path / "panel.csv"), "--scenario", str(scen), "--c1", "0.1",
                   "--phi-u", "0.5", "--out", str(tmp_path / "rep"), "--trees", "10"])
    assert rc == 0
    cols, rows = read_csv(tmp_path / "rep" / "report.csv")
    assert tuple(cols) == REPORT_COLUMNS and len(rows) == 4
    assert (tmp_path / "rep" / "contrast_bands.png").exists()
    assert "flags:" in capsys.readouterr().out


def test_cli_exp_and_rerun(tmp_path):
    out = tmp_path / "e"
    assert cli.main(["exp", "1d", "--out", str(out), "--replications", "1", "--no-figures",
                     "--config", _write_cfg(tmp_path)]) == 0
    assert not (out / "exp1d.png").exists()
    assert cli.main(["exp", "--from-manifest", str(out / "manifest.json"), "--out", str(tmp_path / "r"),
                     "--no-figures"]) == 0
    assert _csvs(out) == _csvs(tmp_path / "r")


def _write_cfg(tmp_path):
    p = tmp_path / "exp.json"
    p.write_text(json.dumps({"n_units": 300, "n_mc": 50}))
    return str(p)


def test_cli_invariant_failure_exit(tmp_path, monkeypatch):
    real = cli.run_experiment

    def broken(cfg, out_dir, figures=True):
        m, r = real(cfg, out_dir, figures)
        m.invariants = {"in_set": False}
        return m, r

    monkeypatch.setattr(cli, "run_experiment", broken)
    assert cli.main(["exp", "1d", "--out", str(tmp_path), "--replications", "1", "--no-figures",
                     "--config", _write_cfg(tmp_path)]) == 1


# --- report examples ---------------------------------------------------------


@pytest.fixture(scope="module")
def report_panel():
    return simulate(DgpConfig(n_units=200), replication_rng(21))


RC = ReportConfig(alpha=0.5, learner=LearnerSpec(n_estimators=10), direct=False)


def test_report_zero_confounding(report_panel):
    r = run_report(report_panel, ScenarioSpec("ksigma", 3, k=1.0), SensitivitySpec(0.0, 0.0), RC)
    for b in r.bands:
        assert b.delta_conf == 0
        assert (b.outer_lower, b.outer_upper) == (b.inner_lower, b.inner_upper)


def test_report_baseline_weight_minimal():
    # holds for the replication average; a single panel can favour a mild stress path
    fast = ReportConfig(alpha=0.5, learner=LearnerSpec(n_estimators=5), direct=False)
    mean = {}
    for k in (0.0, 1.0, 2.0, 3.0):
        runs = [run_report(simulate(DgpConfig(n_units=50), replication_rng(s, 77)), ScenarioSpec("ksigma", 3, k=k),
                           SensitivitySpec(0.1, 0.5), fast) for s in range(8)]
        mean[k] = np.mean([[row["r_weight_stress"] for row in r.rows] for r in runs], axis=0)
    for h in range(3):
        assert mean[0.0][h] < mean[1.0][h] < mean[2.0][h] < mean[3.0][h]


def test_report_abstains_with_reason(report_panel, tmp_path):
    short = ReportConfig(alpha=0.1, learner=LearnerSpec(n_estimators=10), direct=False, calibration_start=50)
    r = run_report(report_panel, ScenarioSpec("ksigma", 6, k=3.0), SensitivitySpec(0.1, 0.5), short)
    assert r.abstained and all(row["abstain"] and row["reason"] for row in r.rows)
    assert all(b.robust_breakdown is None for b in r.bands)
    write_report(r, tmp_path, figures=False)
    d = json.loads((tmp_path / "report.json").read_text())
    assert d["abstained"] is True and "calibration_abstain" in d["diagnostics"]["flags"]


def test_report_requires_sensitivity(report_panel):
    with pytest.raises(ValueError):
        run_report(report_panel, ScenarioSpec("ksigma", 3, k=1.0), None, RC)


def test_inf_written_as_inf(report_panel, tmp_path):
    r = run_report(report_panel, ScenarioSpec("ksigma", 2, k=3.0), SensitivitySpec(0.1, 0.5),
                   ReportConfig(learner=LearnerSpec(n_estimators=10), direct=False))
    write_report(r, tmp_path, figures=False)
    cols, rows = read_csv(tmp_path / "report.csv")
    assert rows[0][cols.index("delta_est")] == "inf" and math.isinf(r.rows[0]["delta_est"])

import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import brute_force_cindex
from survfusion import cli, pipeline
from survfusion.core import RiskScore
from survfusion.ensemble import write_risk_csv

SVG = "{http://www.w3.org/2000/svg}"


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--out", out, "--seed", 3, "--n", 120, "--holdout", 30,
               "--no-volumes") == 0
    return out


@pytest.fixture(scope="module")
def cox_run(cohort, tmp_path_factory):
    out = tmp_path_factory.mktemp("cox")
    assert run("train", "--model", "cox", "--data", cohort / "train.csv",
               "--schema", cohort / "schema.json", "--out", out) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_ingestable_files(cohort):
    for name in ("ehr.csv", "train.csv", "test.csv", "schema.json", "truth.csv",
                 "simulation.json", "resolved_config.json"):
        assert (cohort / name).exists()
    assert len(read_csv(cohort / "train.csv")) == 90 and len(read_csv(cohort / "test.csv")) == 30
    schema = json.loads((cohort / "schema.json").read_text())
    assert list(schema["columns"]) == ["x1", "x2", "x3", "Gender", "Tobacco"]
    assert not (cohort / "volumes").exists()


def test_invalid_model_kind_is_a_config_error(cohort, tmp_path, capsys):
    code = run("train", "--model", "svm", "--data", cohort / "train.csv",
               "--schema", cohort / "schema.json", "--out", tmp_path)
    assert code == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "svm" in err


def test_unknown_flag_and_config_key(tmp_path, capsys):
    assert run("train", "--bogus") == 2
    assert "usage:" in capsys.readouterr().err
    (tmp_path / "c.json").write_text(json.dumps({"model": "cox", "train": {"lrate": 1}}))
    assert run("train", "--config", tmp_path / "c.json") == 2
    assert "lrate" in capsys.readouterr().err


def test_missing_data_is_a_data_error(tmp_path, capsys):
    (tmp_path / "s.json").write_text('{"columns": {"Age": {"kind": "numeric"}}}')
    (tmp_path / "e.csv").write_text("PatientID,Time,Event\na,1,1\n")
    assert run("ingest", "--data", tmp_path / "e.csv", "--schema", tmp_path / "s.json",
               "--out", tmp_path / "o") == 3
    assert "Age" in capsys.readouterr().err


def test_cox_metrics_report_convergence(cox_run):
    metrics = json.loads((cox_run / "metrics.json").read_text())
    assert metrics["converged"] is True and metrics["model"] == "cox"
    assert 0.5 < metrics["train_cindex"] <= 1.0
    assert (cox_run / "loss_trace.csv").exists() and (cox_run / "encoding.json").exists()


def test_predict_on_training_data_keeps_every_id(cohort, cox_run, tmp_path):
    assert run("predict", "--model-dir", cox_run, "--data", cohort / "train.csv",
               "--schema", cohort / "schema.json", "--out", tmp_path) == 0
    ids = [r["PatientID"] for r in read_csv(cohort / "train.csv")]
    risks = read_csv(tmp_path / "risks.csv")
    assert [r["PatientID"] for r in risks] == ids
    assert run("evaluate", "--risks", tmp_path / "risks.csv", "--outcomes", cohort / "train.csv",
               "--out", tmp_path / "ev") == 0
    report = json.loads((tmp_path / "ev" / "evaluation.json").read_text())
    metrics = json.loads((cox_run / "metrics.json").read_text())
    assert report["cindex"] == pytest.approx(metrics["train_cindex"], abs=1e-12)


def test_resolved_config_reproduces_the_run(cox_run, tmp_path):
    resolved = json.loads((cox_run / "resolved_config.json").read_text())
    resolved["out"] = str(tmp_path)
    (tmp_path / "again.json").write_text(json.dumps(resolved))
    assert run("train", "--config", tmp_path / "again.json") == 0
    assert (tmp_path / "model" / "cox.json").read_text() == \
        (cox_run / "model" / "cox.json").read_text()


def write_outcomes(path, time, event):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["PatientID", "Time", "Event"])
        for i, (t, e) in enumerate(zip(time, event)):
            w.writerow([f"q{i}", t, int(e)])


def test_evaluate_perfect_ranking(tmp_path, capsys):
    time = [5, 10, 20, 40]
    write_outcomes(tmp_path / "o.csv", time, [1, 1, 0, 1])
    write_risk_csv(tmp_path / "r.csv", [RiskScore(f"q{i}", -t) for i, t in enumerate(time)])
    assert run("evaluate", "--risks", tmp_path / "r.csv", "--outcomes", tmp_path / "o.csv",
               "--out", tmp_path) == 0
    assert "C-index 1.0000" in capsys.readouterr().out


def test_evaluate_matches_pair_enumeration(tmp_path):
    r = np.random.default_rng(11)
    time = r.integers(1, 12, 25).astype(float)
    event = r.random(25) < 0.6
    risk = np.round(r.standard_normal(25), 1)
    write_outcomes(tmp_path / "o.csv", time, event)
    write_risk_csv(tmp_path / "r.csv", [RiskScore(f"q{i}", v) for i, v in enumerate(risk)])
    assert run("evaluate", "--risks", tmp_path / "r.csv", "--outcomes", tmp_path / "o.csv",
               "--out", tmp_path) == 0
    report = json.loads((tmp_path / "evaluation.json").read_text())
    c, pairs = brute_force_cindex(risk, time, event)
    assert report["cindex"] == pytest.approx(c, abs=1e-12) and report["comparable_pairs"] == pairs


def test_evaluate_without_comparable_pairs(tmp_path):
    write_outcomes(tmp_path / "o.csv", [3, 4], [0, 0])
    write_risk_csv(tmp_path / "r.csv", [RiskScore("q0", 1.0), RiskScore("q1", 2.0)])
    assert run("evaluate", "--risks", tmp_path / "r.csv", "--outcomes", tmp_path / "o.csv",
               "--out", tmp_path) == 5


def sweep(cohort, out, c_reg, lr=(0.05,), folds=3, seed=0, data="train.csv"):
    args = ["sweep", "--data", cohort / data, "--schema", cohort / "schema.json",
            "--out", out, "--folds", folds, "--seed", seed, "--c-reg", *c_reg, "--lr", *lr]
    assert run(*args) == 0
    return read_csv(out / "leaderboard.csv")


def test_sweep_single_point_equals_direct_kfold(cohort, tmp_path):
    rows = sweep(cohort, tmp_path, [1.0])
    assert len(rows) == 1
    cfg = pipeline.RunConfig.from_dict({"data": {"ehr_csv": str(cohort / "train.csv"),
                                                 "schema": str(cohort / "schema.json")},
                                        "train": {"c_reg": 1.0, "lr": 0.05}})
    table, schema = pipeline.read_table(cfg.data)
    mean, _ = pipeline.kfold_cindex(table, schema, "mtlr", cfg, 3, 0)
    assert float(rows[0]["mean_cindex"]) == mean


def test_sweep_is_deterministic(cohort, tmp_path):
    a = sweep(cohort, tmp_path / "a", [1e6, 0.0, 1.0])
    b = sweep(cohort, tmp_path / "b", [1e6, 0.0, 1.0])
    assert a == b and [r["rank"] for r in a] == ["1", "2", "3"]
    means = [float(r["mean_cindex"]) for r in a]
    assert means == sorted(means, reverse=True)


def test_sweep_overregularization_ranks_last_on_strong_signal(tmp_path):
    (tmp_path / "sim.json").write_text(json.dumps({"simulate": {
        "n": 300, "holdout": 0, "volumes": False, "beta_true": [2.0, -1.5, 0.0]}}))
    assert run("simulate", "--config", tmp_path / "sim.json", "--out", tmp_path / "s") == 0
    rows = sweep(tmp_path / "s", tmp_path / "sw", [1e6, 0.0], lr=(0.016,), data="ehr.csv")
    assert float(rows[0]["c_reg"]) == 0.0


def test_sweep_empty_grid(cohort, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"sweep": {"c_reg": []}}))
    assert run("sweep", "--config", tmp_path / "c.json", "--data", cohort / "train.csv",
               "--schema", cohort / "schema.json", "--out", tmp_path) == 2


def parse_svg(path):
    root = ET.parse(path).getroot()
    return root, root.findall(f".//{SVG}path")


def test_plot_outputs(cohort, cox_run, tmp_path):
    assert run("plot", "--model-dir", cox_run, "--data", cohort / "train.csv",
               "--schema", cohort / "schema.json", "--out", tmp_path,
               "--covariate", "x1", "--values", -1, 0, 1) == 0
    for stem in ("km", "survival_curves", "partial_effects"):
        rows = read_csv(tmp_path / f"{stem}.csv")
        root, paths = parse_svg(tmp_path / f"{stem}.svg")
        assert root.tag == f"{SVG}svg"
        assert len(paths) == len({r["curve"] for r in rows})
    # curve CSV reproduces the model's own curves exactly
    loaded = pipeline.load_model(cox_run)
    cfg = pipeline.RunConfig.from_dict({"data": {"ehr_csv": str(cohort / "train.csv"),
                                                 "schema": str(cohort / "schema.json")}})
    data = pipeline.load_cohort(cfg.data, loaded.encoding)
    curves = pipeline.member_curves("cox", loaded.members["cox"], data, range(5))
    rows = read_csv(tmp_path / "survival_curves.csv")
    for i, curve in enumerate(curves):
        mine = [r for r in rows if r["curve"] == data.patient_ids[i]]
        assert [float(r["time"]) for r in mine] == curve.times.tolist()
        assert [float(r["probability"]) for r in mine] == curve.probabilities.tolist()
    # x1 has a positive true coefficient: higher x1, lower survival everywhere
    pe = read_csv(tmp_path / "partial_effects.csv")
    by = {}
    for r in pe:
        by.setdefault(r["curve"], []).append(float(r["probability"]))
    low, mid, high = (np.array(by[k]) for k in ("x1=-1", "x1=0", "x1=1"))
    assert np.all(high <= mid) and np.all(mid <= low) and np.any(high < low)


def test_plot_unknown_covariate(cohort, cox_run, tmp_path):
    assert run("plot", "--model-dir", cox_run, "--data", cohort / "train.csv",
               "--schema", cohort / "schema.json", "--out", tmp_path, "--covariate", "Age") == 3


def test_ingest_drop_policy(cohort, tmp_path):
    assert run("ingest", "--data", cohort / "ehr.csv", "--schema", cohort / "schema.json",
               "--policy", "drop", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "ingest_report.json").read_text())
    assert report["dropped_columns"] == ["Tobacco"] and report["rows"] == 120
    header = read_csv(tmp_path / "features.csv")[0].keys()
    assert "Tobacco" not in header and "Gender=M" in header


def test_deep_fusion_two_epochs(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", "--out", sim, "--n", 24, "--holdout", 4, "--seed", 1) == 0
    out = tmp_path / "df"
    assert run("train", "--model", "deep-fusion-v2", "--epochs", 2, "--data", sim / "train.csv",
               "--schema", sim / "schema.json", "--volumes", sim / "volumes",
               "--bbox", sim / "bbox.csv", "--out", out) == 0
    trace = read_csv(out / "loss_trace.csv")
    assert [r["epoch"] for r in trace] == ["0", "1"]
    assert (out / "model" / "params.bin").exists() and (out / "model" / "manifest.json").exists()
    assert run("predict", "--model-dir", out, "--data", sim / "test.csv", "--schema",
               sim / "schema.json", "--volumes", sim / "volumes", "--bbox", sim / "bbox.csv",
               "--out", tmp_path / "pred") == 0
    assert len(read_csv(tmp_path / "pred" / "risks.csv")) == 4

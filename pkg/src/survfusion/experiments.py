"""Four-configuration comparison on a synthetic cohort, shaped like the published results table.

The reference column holds the C-indices reported on the HECKTOR 2021 test set;
they are not reproducible here and are kept only for side-by-side reading.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from . import pipeline
from .core import concordance_report

COMPARISON = (
    # name, model kind, fusion overrides, ensemble members, reported C-index
    ("MTLR", "mtlr", {}, None, 0.66),
    ("MTLR + Deep-CR", "deep-fusion-v2", {"kernels": [3, 3]}, None, 0.67),
    ("MTLR + CoxPH + Deep Fusion V1", "ensemble", {}, ["deep-fusion-v1", "cox"], 0.67),
    ("MTLR + CoxPH + Deep Fusion V2", "ensemble", {}, ["deep-fusion-v2", "cox"], 0.72),
)
COLUMNS = ("model", "heldout_cindex", "comparable_pairs", "train_cindex", "reported_hecktor")


@dataclass
class ComparisonConfig:
    seed: int = 0
    n: int = 160
    holdout: int = 40
    epochs: int = 100
    profile: str = "desk"


def run_comparison(out_dir, config: ComparisonConfig | None = None):
    """Simulate once, train/predict/evaluate each configuration; writes ``table1.csv``."""
    config = config or ComparisonConfig()
    out = Path(out_dir)
    sim = out / "cohort"
    base = {"seed": config.seed, "out": str(sim),
            "simulate": {"n": config.n, "holdout": config.holdout}}
    pipeline.cmd_simulate(pipeline.RunConfig.from_dict(base))
    data = {"schema": str(sim / "schema.json"), "volumes_dir": str(sim / "volumes"),
            "bbox_csv": str(sim / "bbox.csv")}
    rows = []
    for i, (name, kind, arch, members, reported) in enumerate(COMPARISON):
        run_dir = out / f"config{i + 1}"
        cfg = {"seed": config.seed, "model": kind, "out": str(run_dir / "train"),
               "data": {**data, "ehr_csv": str(sim / "train.csv")},
               "train": {"epochs": config.epochs},
               "fusion": {"profile": config.profile, **arch}}
        if members:
            cfg["ensemble"] = {"members": members}
        metrics = pipeline.cmd_train(pipeline.RunConfig.from_dict(cfg))
        pred = {**cfg, "out": str(run_dir / "test"), "model_dir": str(run_dir / "train"),
                "data": {**data, "ehr_csv": str(sim / "test.csv")}}
        risks = pipeline.cmd_predict(pipeline.RunConfig.from_dict(pred))
        c, pairs = concordance_report(risks, pipeline.read_outcomes(sim / "test.csv"))
        rows.append({"model": name, "heldout_cindex": c, "comparable_pairs": pairs,
                     "train_cindex": metrics["train_cindex"], "reported_hecktor": reported})
    with open(out / "table1.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return rows

#!/usr/bin/env python3
"""Desk-scale run of the full command-line pipeline.

simulate (n=160, 24x24x16 volumes) -> train Deep Fusion V2 + CoxPH ensemble on
120 patients -> predict the 40 held-out patients -> evaluate -> plot.
Takes under three minutes on one core.

    python3 scripts/desk_end_to_end.py --out runs/desk
"""
import argparse
import sys
from pathlib import Path

from survfusion.cli import main as cli


def run(out, seed=0, epochs=100):
    out = Path(out)
    sim = out / "cohort"
    data = ["--schema", str(sim / "schema.json"), "--volumes", str(sim / "volumes"),
            "--bbox", str(sim / "bbox.csv")]
    steps = [
        ["simulate", "--n", "160", "--holdout", "40", "--seed", str(seed), "--out", str(sim)],
        ["train", "--model", "ensemble", "--epochs", str(epochs), "--seed", str(seed),
         "--data", str(sim / "train.csv"), *data, "--out", str(out / "model")],
        ["predict", "--model-dir", str(out / "model"), "--data", str(sim / "test.csv"), *data,
         "--out", str(out / "predict")],
        ["evaluate", "--risks", str(out / "predict" / "risks.csv"),
         "--outcomes", str(sim / "test.csv"), "--out", str(out / "evaluate")],
        ["plot", "--model-dir", str(out / "model"), "--data", str(sim / "test.csv"), *data,
         "--out", str(out / "plots")],
    ]
    for argv in steps:
        code = cli(argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    a = p.parse_args()
    sys.exit(run(a.out, a.seed, a.epochs))

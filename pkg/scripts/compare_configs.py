#!/usr/bin/env python3
"""Train and score the four model configurations on one synthetic cohort.

Writes <out>/table1.csv with held-out C-index per configuration next to the
value reported on HECKTOR 2021 (reference only; that cohort is private).

    python3 scripts/compare_configs.py --out runs/compare --epochs 100
"""
import argparse

from survfusion.experiments import ComparisonConfig, run_comparison


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/compare")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=160)
    p.add_argument("--holdout", type=int, default=40)
    p.add_argument("--epochs", type=int, default=100)
    a = p.parse_args()
    rows = run_comparison(a.out, ComparisonConfig(a.seed, a.n, a.holdout, a.epochs))
    width = max(len(r["model"]) for r in rows)
    print(f"{'model':<{width}}  held-out C  (HECKTOR reported)")
    for r in rows:
        print(f"{r['model']:<{width}}  {r['heldout_cindex']:.3f}       ({r['reported_hecktor']:.2f})")


if __name__ == "__main__":
    main()

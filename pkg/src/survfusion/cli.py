"""``survfusion`` command line.

Exit codes: 0 ok, 2 config, 3 data, 4 convergence, 5 evaluation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import pipeline
from .errors import ConfigError, SurvFusionError

COMMANDS = {
    "ingest": pipeline.cmd_ingest,
    "train": pipeline.cmd_train,
    "predict": pipeline.cmd_predict,
    "evaluate": pipeline.cmd_evaluate,
    "simulate": pipeline.cmd_simulate,
    "sweep": pipeline.cmd_sweep,
    "plot": pipeline.cmd_plot,
}

PATH_KEYS = {None: ("out", "model_dir", "risks_csv", "outcomes_csv"),
             "data": ("ehr_csv", "schema", "volumes_dir", "bbox_csv")}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="EHR CSV")
    data.add_argument("--schema", help="schema JSON")
    data.add_argument("--policy", choices=("impute", "drop"))
    data.add_argument("--volumes", help="directory of <id>_ct/_pet volumes")
    data.add_argument("--bbox", help="bounding-box CSV")

    p = _Parser(prog="survfusion", description="Survival prognosis with MTLR, CoxPH and Deep Fusion.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", parents=[common, data], help="parse and encode an EHR CSV")
    t = sub.add_parser("train", parents=[common, data], help="train a model")
    t.add_argument("--model", help=f"one of {', '.join(pipeline.MODEL_KINDS)}")
    t.add_argument("--epochs", type=int)
    t.add_argument("--full-batch", action="store_true", default=None)
    pr = sub.add_parser("predict", parents=[common, data], help="write PatientID,Risk")
    pr.add_argument("--model-dir")
    ev = sub.add_parser("evaluate", parents=[common], help="C-index of a risk CSV")
    ev.add_argument("--risks")
    ev.add_argument("--outcomes", help="CSV with PatientID, Time, Event")
    sm = sub.add_parser("simulate", parents=[common], help="write a synthetic cohort")
    sm.add_argument("--n", type=int)
    sm.add_argument("--holdout", type=int)
    sm.add_argument("--no-volumes", action="store_true")
    sw = sub.add_parser("sweep", parents=[common, data], help="k-fold grid over c_reg x lr")
    sw.add_argument("--c-reg", type=float, nargs="+")
    sw.add_argument("--lr", type=float, nargs="+")
    sw.add_argument("--folds", type=int)
    pl = sub.add_parser("plot", parents=[common, data], help="KM, patient and partial-effect curves")
    pl.add_argument("--model-dir")
    pl.add_argument("--covariate")
    pl.add_argument("--values", type=float, nargs="+")
    return p


def resolve_config(args):
    raw = {}
    if args.config:
        raw = pipeline.RunConfig.load(args.config).to_dict()
    sections = {k: dict(raw.get(k, {})) for k in pipeline.RunConfig.SECTIONS}
    top = {k: v for k, v in raw.items() if k not in sections}

    def put(section, key, value):
        if value is not None:
            (sections[section] if section else top)[key] = value

    put(None, "seed", args.seed)
    put(None, "out", args.out)
    for flag, key in (("data", "ehr_csv"), ("schema", "schema"), ("policy", "policy"),
                      ("volumes", "volumes_dir"), ("bbox", "bbox_csv")):
        put("data", key, getattr(args, flag, None))
    put(None, "model", getattr(args, "model", None))
    put("train", "epochs", getattr(args, "epochs", None))
    put("train", "full_batch", getattr(args, "full_batch", None))
    put(None, "model_dir", getattr(args, "model_dir", None))
    put(None, "risks_csv", getattr(args, "risks", None))
    put(None, "outcomes_csv", getattr(args, "outcomes", None))
    put("simulate", "n", getattr(args, "n", None))
    put("simulate", "holdout", getattr(args, "holdout", None))
    if getattr(args, "no_volumes", False):
        sections["simulate"]["volumes"] = False
    put("sweep", "c_reg", getattr(args, "c_reg", None))
    put("sweep", "lr", getattr(args, "lr", None))
    put("sweep", "folds", getattr(args, "folds", None))
    put("plot", "covariate", getattr(args, "covariate", None))
    put("plot", "values", getattr(args, "values", None))
    # absolute paths keep the resolved copy usable from any working directory
    for section, keys in PATH_KEYS.items():
        target = sections[section] if section else top
        for k in keys:
            if target.get(k) is not None:
                target[k] = os.path.abspath(target[k])
    return pipeline.RunConfig.from_dict({**top, **sections})


def _summary(command, result):
    if command == "evaluate":
        return f"C-index {result['cindex']:.4f} over {result['comparable_pairs']} comparable pairs"
    if command == "train":
        c = result.get("train_cindex")
        c = "undefined" if c is None else f"{c:.4f}"
        return f"trained {result['model']}: training C-index {c}, converged={result['converged']}"
    if command == "predict":
        return f"wrote {len(result)} risk scores"
    if command == "sweep":
        best = result[0]
        return (f"best c_reg={best['c_reg']} lr={best['lr']}: "
                f"mean C-index {best['mean_cindex']:.4f}")
    if command == "plot":
        return "wrote " + ", ".join(result)
    return json.dumps(result)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        if "usage" not in str(exc) and "survfusion" not in str(exc):
            parser.print_usage(sys.stderr)
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SurvFusionError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    print(_summary(args.command, result))
    return 0


if __name__ == "__main__":
    sys.exit(main())

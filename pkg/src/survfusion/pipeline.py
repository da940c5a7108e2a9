"""Run configuration and the plumbing behind each command-line subcommand.

A run is described by one JSON object (``RunConfig``). Sections mirror the
library configs; unknown keys anywhere are rejected. Every command writes the
fully resolved config next to its outputs, so a run can be repeated from that
copy alone.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import coxph, ensemble, fusion, mtlr, nn, plotting, synthetic, tabular, volume
from .core import (RiskScore, SurvivalCurve, SurvivalRecord, concordance_report, harrell_c,
                   kaplan_meier, make_time_grid, records_to_arrays)
from .errors import ConfigError, EvaluationError, InputError, UndefinedCIndexError

log = logging.getLogger(__name__)

MODEL_KINDS = ("cox", "mtlr", "neural-mtlr", "deep-fusion-v1", "deep-fusion-v2", "ensemble")
MEMBER_KINDS = MODEL_KINDS[:-1]
# desk/paper preprocessing targets, (W, H, D)
PREPROCESS_DEFAULTS = {"desk": ((24, 24, 16), (16, 16, 16)),
                       "paper": ((144, 144, 144), (80, 80, 50))}


# ---------------------------------------------------------------- config

def _section(cls, d, where):
    if d is None:
        return cls()
    if isinstance(d, cls):
        return d
    if not isinstance(d, dict):
        raise ConfigError(f"'{where}' must be a JSON object")
    unknown = sorted(set(d) - {f.name for f in fields(cls)})
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{where}': {exc}") from exc


@dataclass
class DataConfig:
    ehr_csv: str | None = None
    schema: str | None = None
    policy: str = "impute"  # impute | drop
    volumes_dir: str | None = None
    bbox_csv: str | None = None
    box_target: list | None = None  # (W, H, D); defaults follow the fusion profile
    crop_target: list | None = None
    crop_offset: list = field(default_factory=lambda: [0, 0, 0])
    normalization: str = "minmax"

    def __post_init__(self):
        if self.policy not in ("impute", "drop"):
            raise ValueError(f"policy must be impute or drop, got {self.policy!r}")


@dataclass
class TrainConfig:
    """Optimizer settings shared by the MTLR variants and Deep Fusion."""
    c_reg: float = 1.0
    lr: float = 0.016
    epochs: int = 100
    batch_size: int = 16
    optimizer: str = "adam"
    full_batch: bool = False
    hidden: list = field(default_factory=lambda: [256, 256])  # neural MTLR encoder
    dropout: float = 0.2
    grid_m: int | str = "auto"


@dataclass
class FusionSection:
    profile: str = "desk"
    channels: list | None = None
    kernels: list | None = None
    feature_len: int | None = None
    fc_widths: list | None = None

    def __post_init__(self):
        if self.profile not in PREPROCESS_DEFAULTS:
            raise ValueError(f"profile must be desk or paper, got {self.profile!r}")


@dataclass
class EnsembleSection:
    members: list = field(default_factory=lambda: ["deep-fusion-v2", "cox"])
    weights: list | None = None
    normalization: str = "zscore"


@dataclass
class SimulateConfig:
    n: int = 160
    d: int = 3
    beta_true: list = field(default_factory=lambda: [1.0, -0.5, 0.0])
    baseline_rate: float = 0.01
    censoring: float | None = 0.3  # target fraction; overrides c_max when set
    c_max: float = 400.0
    link: str = "linear"
    volumes: bool = True
    shape: list = field(default_factory=lambda: [16, 24, 24])  # (D, H, W)
    noise_sd: float = 0.2
    contrast: float = 1.0
    pet_contrast: float = 2.0
    extras: bool = True  # add null-effect Gender and Tobacco columns
    holdout: int = 40


@dataclass
class SweepConfig:
    c_reg: list = field(default_factory=lambda: [0.1, 1.0, 10.0])
    lr: list = field(default_factory=lambda: [0.016])
    folds: int = 5
    model: str = "mtlr"


@dataclass
class PlotConfig:
    covariate: str | None = None
    values: list | None = None  # standardized units; default 10/50/90% quantiles
    patients: list | int = 5


@dataclass
class RunConfig:
    model: str = "mtlr"
    seed: int = 0
    out: str = "run"
    model_dir: str | None = None
    risks_csv: str | None = None
    outcomes_csv: str | None = None
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cox: coxph.CoxConfig = field(default_factory=coxph.CoxConfig)
    fusion: FusionSection = field(default_factory=FusionSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    plot: PlotConfig = field(default_factory=PlotConfig)

    SECTIONS = {"data": DataConfig, "train": TrainConfig, "cox": coxph.CoxConfig,
                "fusion": FusionSection, "ensemble": EnsembleSection,
                "simulate": SimulateConfig, "sweep": SweepConfig, "plot": PlotConfig}

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}; choose from "
                              f"{', '.join(MODEL_KINDS)}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        for m in self.ensemble.members:
            if m not in MEMBER_KINDS:
                raise ConfigError(f"unknown ensemble member {m!r}")

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        top = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - top)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kw = {k: v for k, v in d.items() if k not in cls.SECTIONS}
        for name, sec in cls.SECTIONS.items():
            kw[name] = _section(sec, d.get(name), name)
        return cls(**kw)

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self):
        return asdict(self)

    def write_resolved(self, directory):
        Path(directory).mkdir(parents=True, exist_ok=True)
        _write_json(Path(directory) / "resolved_config.json", self.to_dict())


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def _require(value, what):
    if value is None:
        raise ConfigError(f"missing {what}")
    return value


# ---------------------------------------------------------------- data

@dataclass
class Cohort:
    table: tabular.EhrTable
    records: list
    encoding: tabular.EncodingSpec
    data: DataConfig
    _images: dict = field(default_factory=dict)

    @property
    def patient_ids(self):
        return self.table.patient_ids

    def arrays(self):
        return records_to_arrays(self.records)

    def images(self, paths, preprocess: volume.PreprocessConfig):
        """Stacked (N, 1, D, H, W) arrays for the requested image paths."""
        key = json.dumps(asdict(preprocess), sort_keys=True)
        if key not in self._images:
            self._images[key] = load_images(self.patient_ids, self.data, preprocess)
        cached = self._images[key]
        return {p: cached[p] for p in paths}


def read_table(data: DataConfig):
    path = _require(data.ehr_csv, "data.ehr_csv")
    schema = tabular.EncodingSpec.load(_require(data.schema, "data.schema"))
    table = tabular.parse_ehr_csv(path, schema)
    for diag in table.rejected:
        log.warning("rejected row: %s", diag)
    return table, schema


def load_cohort(data: DataConfig, encoding: tabular.EncodingSpec | None = None):
    """Parse the EHR CSV; fit the encoding unless a fitted one is given."""
    table, schema = read_table(data)
    if encoding is None:
        records, encoding = tabular.encode(table, schema, data.policy)
    else:
        records = tabular.apply_encoding(table, encoding)
    return Cohort(table, records, encoding, data)


def preprocess_config(data: DataConfig, profile="desk"):
    box, crop = PREPROCESS_DEFAULTS[profile]
    return volume.PreprocessConfig(tuple(data.box_target or box), tuple(data.crop_target or crop),
                                   tuple(data.crop_offset), data.normalization)


def load_images(patient_ids, data: DataConfig, pre: volume.PreprocessConfig):
    root = Path(_require(data.volumes_dir, "data.volumes_dir (needed by image models)"))
    boxes = volume.read_bbox_csv(data.bbox_csv) if data.bbox_csv else {}
    out = {"ct": [], "pet": [], "fused": []}
    for pid in patient_ids:
        pair = [volume.load_volume(root / f"{pid}_{m}.f32", root / f"{pid}.json")
                for m in ("ct", "pet")]
        if boxes and pid not in boxes:
            raise InputError(f"no bounding box for patient {pid} in {data.bbox_csv}")
        for name, v in zip(("ct", "pet", "fused"), volume.preprocess_pair(*pair, boxes.get(pid), pre)):
            out[name].append(v.data)
    return {k: np.stack(v)[:, None] for k, v in out.items()}


def subset_table(table: tabular.EhrTable, idx):
    idx = list(idx)
    return tabular.EhrTable([table.patient_ids[i] for i in idx],
                            {c: [v[i] for i in idx] for c, v in table.columns.items()},
                            dict(table.kinds), table.time[idx], table.event[idx])


# ---------------------------------------------------------------- models

def _mtlr_config(cfg: RunConfig, cls=mtlr.MtlrConfig, **extra):
    t = cfg.train
    kw = dict(c_reg=t.c_reg, lr=t.lr, epochs=t.epochs, batch_size=t.batch_size,
              optimizer=t.optimizer, seed=cfg.seed, full_batch=t.full_batch)
    kw.update(extra)
    return cls(**kw)


def fusion_config(cfg: RunConfig, variant):
    f = cfg.fusion
    pre = preprocess_config(cfg.data, f.profile)
    w, h, d = pre.crop_target
    arch = {k: tuple(v) if isinstance(v, list) else v
            for k, v in (("channels", f.channels), ("kernels", f.kernels),
                         ("feature_len", f.feature_len), ("fc_widths", f.fc_widths))
            if v is not None}
    t = cfg.train
    make = fusion.FusionConfig.paper if f.profile == "paper" else fusion.FusionConfig.desk
    try:
        fc = make(variant, dropout=t.dropout, batch_size=t.batch_size, lr=t.lr, epochs=t.epochs,
                  c_reg=t.c_reg, seed=cfg.seed, full_batch=t.full_batch, optimizer=t.optimizer)
        fc = fusion.FusionConfig.from_dict({**fc.to_dict(), **arch, "input_shape": (d, h, w)})
    except InputError as exc:
        raise ConfigError(str(exc)) from exc
    return fc, pre


def _grid(cfg: RunConfig, records):
    m = cfg.train.grid_m
    if m != "auto" and (not isinstance(m, int) or m < 1):
        raise ConfigError(f"train.grid_m must be a positive integer or 'auto', got {m!r}")
    return make_time_grid(records, m)


def _batch(cohort: Cohort, fc, pre):
    X, time, event = cohort.arrays()
    return fusion.MultimodalBatch(list(cohort.patient_ids), cohort.images(fc.path_names, pre),
                                  X, time, event)


def fit_member(kind, cohort: Cohort, cfg: RunConfig, directory):
    """Train one model kind, save it under ``directory``.

    Returns ``(risk, trace_rows, converged)``; trace rows are
    ``(epoch, loss, val_cindex)``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = cohort.records
    X, _, _ = cohort.arrays()
    if kind == "cox":
        model = coxph.fit_cox(records, cfg.cox, list(cohort.encoding.features))
        _write_json(directory / "cox.json", {"kind": "cox", "model": model.to_dict()})
        rows = [(r["iter"], r["loss"], None) for r in model.trace]
        return coxph.linear_predictor(model, X), rows, model.converged
    if kind == "mtlr":
        params, trace = mtlr.fit_mtlr(records, _grid(cfg, records), _mtlr_config(cfg))
        _write_json(directory / "mtlr.json", {"kind": "mtlr", "params": params.to_dict()})
        return mtlr.risk_scores(params, X), [(i, v, None) for i, v in enumerate(trace)], True
    if kind == "neural-mtlr":
        ncfg = _mtlr_config(cfg, mtlr.NeuralMtlrConfig, hidden=tuple(cfg.train.hidden),
                            dropout=cfg.train.dropout)
        model, trace = mtlr.fit_neural_mtlr(records, _grid(cfg, records), ncfg)
        nn.save_checkpoint(directory, model.state_dict(),
                           {"kind": "neural-mtlr", **model.manifest()})
        return model.risk(X), [(i, v, None) for i, v in enumerate(trace)], True
    if kind.startswith("deep-fusion"):
        fc, pre = fusion_config(cfg, kind[-2:])
        batch = _batch(cohort, fc, pre)
        model = fusion.build_model(fc, X.shape[1], _grid(cfg, records))
        trace = fusion.train(model, batch, fc)
        model.save(directory, {"kind": kind, "preprocess": asdict(pre)})
        return model.risk(batch), trace, True
    raise ConfigError(f"unknown model kind {kind!r}")


def load_member(kind, directory):
    directory = Path(directory)
    if kind == "cox":
        return coxph.CoxModel.from_dict(json.loads((directory / "cox.json").read_text())["model"])
    if kind == "mtlr":
        return mtlr.MtlrParams.from_dict(json.loads((directory / "mtlr.json").read_text())["params"])
    if kind == "neural-mtlr":
        arrays, man = nn.load_checkpoint(directory)
        return mtlr.NeuralMtlrModel.from_manifest(man, arrays)
    if kind.startswith("deep-fusion"):
        model, man = fusion.DeepFusionModel.load(directory)
        model.preprocess = volume.PreprocessConfig(**{k: tuple(v) if isinstance(v, list) else v
                                                      for k, v in man["preprocess"].items()})
        return model
    raise ConfigError(f"unknown model kind {kind!r}")


def member_risk(kind, model, cohort: Cohort):
    X, _, _ = cohort.arrays()
    if kind == "cox":
        return coxph.linear_predictor(model, X)
    if kind == "mtlr":
        return mtlr.risk_scores(model, X)
    if kind == "neural-mtlr":
        return model.risk(X)
    batch = _batch(cohort, model.config, model.preprocess)
    return model.risk(batch)


def member_curves(kind, model, cohort: Cohort, idx):
    """Predicted survival curves for the patients at positions ``idx``."""
    X, _, _ = cohort.arrays()
    if kind == "cox":
        return [model.survival_curve(X[i]) for i in idx]
    if kind == "mtlr":
        return [mtlr.predict_survival_curve(model, X[i]) for i in idx]
    if kind == "neural-mtlr":
        return [model.predict_survival_curve(X[i]) for i in idx]
    sub = Cohort(subset_table(cohort.table, idx), [cohort.records[i] for i in idx],
                 cohort.encoding, cohort.data)
    z = model.scores(_batch(sub, model.config, model.preprocess))
    s = mtlr.survival_from_scores(z)
    times = np.concatenate([[0.0], model.grid.points])
    return [SurvivalCurve(times, np.concatenate([[1.0], row])) for row in s]


@dataclass
class LoadedModel:
    kind: str
    encoding: tabular.EncodingSpec
    members: dict  # kind -> model object
    spec: ensemble.EnsembleSpec | None = None


def load_model(model_dir) -> LoadedModel:
    root = Path(_require(model_dir, "model_dir"))
    try:
        info = json.loads((root / "model.json").read_text())
    except OSError as exc:
        raise ConfigError(f"{root} does not hold a trained model: {exc}") from exc
    encoding = tabular.EncodingSpec.load(root / "encoding.json")
    kind = info["kind"]
    if kind == "ensemble":
        spec = ensemble.EnsembleSpec.from_dict(info["ensemble"])
        members = {m: load_member(m, root / "members" / m) for m in spec.members}
        return LoadedModel(kind, encoding, members, spec)
    return LoadedModel(kind, encoding, {kind: load_member(kind, root / "model")})


def predict(loaded: LoadedModel, cohort: Cohort):
    """Final risks plus per-member risks (one entry when not an ensemble)."""
    per = {k: member_risk(k, m, cohort) for k, m in loaded.members.items()}
    ids = list(cohort.patient_ids)
    if loaded.spec is None:
        return [RiskScore(p, v) for p, v in zip(ids, per[loaded.kind])], per
    lists = [[RiskScore(p, v) for p, v in zip(ids, per[k])] for k in loaded.spec.members]
    return ensemble.average_risks(lists, loaded.spec), per


# ---------------------------------------------------------------- commands

def _write_trace(path, rows, member=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["member"] if member else []) + ["epoch", "loss", "val_cindex"])
        for r in rows:
            w.writerow(([member] if member else []) +
                       [r[0], repr(float(r[1])), "" if r[2] is None else repr(float(r[2]))])


def _ensemble_spec(cfg: RunConfig):
    e = cfg.ensemble
    try:
        return ensemble.EnsembleSpec(list(e.members), e.weights, e.normalization)
    except InputError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(cfg: RunConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    cohort = load_cohort(cfg.data)
    cohort.encoding.save(out / "encoding.json")
    _, time, event = cohort.arrays()
    if cfg.model == "ensemble":
        spec = _ensemble_spec(cfg)
        per, converged, trace_files = {}, True, []
        for m in spec.members:
            risk, rows, ok = fit_member(m, cohort, cfg, out / "members" / m)
            _write_trace(out / "members" / m / "loss_trace.csv", rows)
            per[m], converged = risk, converged and ok
            trace_files.append((m, rows))
        ids = list(cohort.patient_ids)
        lists = [[RiskScore(p, v) for p, v in zip(ids, per[m])] for m in spec.members]
        risk = np.array([r.value for r in ensemble.average_risks(lists, spec)])
        with open(out / "loss_trace.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["member", "epoch", "loss", "val_cindex"])
            for m, rows in trace_files:
                for r in rows:
                    w.writerow([m, r[0], repr(float(r[1])), "" if r[2] is None else repr(float(r[2]))])
        _write_json(out / "model.json", {"kind": "ensemble", "ensemble": spec.to_dict()})
    else:
        risk, rows, converged = fit_member(cfg.model, cohort, cfg, out / "model")
        per = {cfg.model: risk}
        _write_trace(out / "loss_trace.csv", rows)
        _write_json(out / "model.json", {"kind": cfg.model})
    metrics = {"model": cfg.model, "n_patients": len(cohort.records),
               "n_events": int(np.sum(event)), "features": list(cohort.encoding.features),
               "converged": bool(converged)}
    try:
        c, pairs = harrell_c(risk, time, event)
        metrics.update(train_cindex=c, comparable_pairs=pairs)
        for m, r in per.items():
            if len(per) > 1:
                metrics.setdefault("member_train_cindex", {})[m] = harrell_c(r, time, event)[0]
    except UndefinedCIndexError:
        metrics.update(train_cindex=None, comparable_pairs=0)
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_predict(cfg: RunConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    loaded = load_model(cfg.model_dir)
    cohort = load_cohort(cfg.data, loaded.encoding)
    risks, per = predict(loaded, cohort)
    ensemble.write_risk_csv(out / "risks.csv", risks)
    if len(per) > 1:
        for k, vals in per.items():
            ensemble.write_risk_csv(out / f"risks_{k}.csv",
                                    [RiskScore(p, v) for p, v in zip(cohort.patient_ids, vals)])
    return risks


def read_outcomes(path):
    """PatientID/Time/Event columns of any CSV (extra columns ignored)."""
    records = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read outcomes {path}: {exc}") from exc
    with fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                records.append(SurvivalRecord(row[tabular.ID_COL], np.zeros(1),
                                              float(row[tabular.TIME_COL]),
                                              int(float(row[tabular.EVENT_COL])) == 1))
            except (KeyError, ValueError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: bad outcome row ({exc})") from exc
    return records


def cmd_evaluate(cfg: RunConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    risks = ensemble.read_risk_csv(_require(cfg.risks_csv, "risks_csv"))
    records = read_outcomes(_require(cfg.outcomes_csv, "outcomes_csv"))
    c, pairs = concordance_report(risks, records)
    report = {"cindex": c, "comparable_pairs": pairs, "n_patients": len(records)}
    _write_json(out / "evaluation.json", report)
    return report


def kfold_cindex(table, schema, kind, cfg: RunConfig, folds, seed):
    """Mean held-out C-index over ``folds`` folds; fold assignment depends only on seed."""
    n = len(table)
    if folds < 2 or folds > n:
        raise ConfigError(f"folds must be in [2, {n}], got {folds}")
    perm = np.random.default_rng(seed).permutation(n)
    scores = []
    for f, val_idx in enumerate(np.array_split(perm, folds)):
        tr_idx = np.setdiff1d(perm, val_idx)
        tr = subset_table(table, tr_idx)
        va = subset_table(table, val_idx)
        records, enc = tabular.encode(tr, schema, cfg.data.policy)
        val_records = tabular.apply_encoding(va, enc)
        Xv, tv, ev = records_to_arrays(val_records)
        grid = _grid(cfg, records)
        if kind == "mtlr":
            params, _ = mtlr.fit_mtlr(records, grid, _mtlr_config(cfg))
            risk = mtlr.risk_scores(params, Xv)
        elif kind == "neural-mtlr":
            ncfg = _mtlr_config(cfg, mtlr.NeuralMtlrConfig, hidden=tuple(cfg.train.hidden),
                                dropout=cfg.train.dropout)
            risk = mtlr.fit_neural_mtlr(records, grid, ncfg)[0].risk(Xv)
        else:
            raise ConfigError(f"sweep supports mtlr and neural-mtlr, not {kind!r}")
        try:
            scores.append(harrell_c(risk, tv, ev)[0])
        except UndefinedCIndexError:
            log.warning("fold %d has no comparable pairs; skipped", f)
    if not scores:
        raise EvaluationError("no fold produced a defined C-index")
    return float(np.mean(scores)), scores


def cmd_sweep(cfg: RunConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    s = cfg.sweep
    if not s.c_reg or not s.lr:
        raise ConfigError("sweep grid is empty (need at least one c_reg and one lr)")
    table, schema = read_table(cfg.data)
    rows = []
    for c_reg in s.c_reg:
        for lr in s.lr:
            run = RunConfig.from_dict({**cfg.to_dict(),
                                       "train": {**asdict(cfg.train), "c_reg": c_reg, "lr": lr}})
            mean, scores = kfold_cindex(table, schema, s.model, run, s.folds, cfg.seed)
            rows.append({"c_reg": c_reg, "lr": lr, "mean_cindex": mean,
                         "sd_cindex": float(np.std(scores)), "folds": len(scores)})
    rows.sort(key=lambda r: -r["mean_cindex"])  # stable: ties keep grid order
    with open(out / "leaderboard.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["rank", "c_reg", "lr", "mean_cindex", "sd_cindex", "folds"])
        w.writeheader()
        for i, r in enumerate(rows, start=1):
            w.writerow({"rank": i, **{k: repr(v) if isinstance(v, float) else v
                                      for k, v in r.items()}})
    return rows


def _select_patients(cohort, which):
    ids = list(cohort.patient_ids)
    if isinstance(which, int):
        return list(range(min(which, len(ids))))
    pos = {p: i for i, p in enumerate(ids)}
    missing = [p for p in which if p not in pos]
    if missing:
        raise InputError(f"unknown patient id(s) for plotting: {', '.join(map(str, missing))}")
    return [pos[p] for p in which]


def cmd_plot(cfg: RunConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    loaded = load_model(cfg.model_dir)
    cohort = load_cohort(cfg.data, loaded.encoding)
    written = []

    km = [("Kaplan-Meier", kaplan_meier(cohort.records))]
    plotting.write_curves_csv(out / "km.csv", km)
    plotting.write_step_svg(out / "km.svg", km, "Kaplan-Meier estimate")
    written += ["km.csv", "km.svg"]

    idx = _select_patients(cohort, cfg.plot.patients)
    curves = []
    for kind, model in loaded.members.items():
        prefix = f"{kind}:" if len(loaded.members) > 1 else ""
        for i, c in zip(idx, member_curves(kind, model, cohort, idx)):
            curves.append((prefix + cohort.patient_ids[i], c))
    plotting.write_curves_csv(out / "survival_curves.csv", curves)
    plotting.write_step_svg(out / "survival_curves.svg", curves, "Predicted survival")
    written += ["survival_curves.csv", "survival_curves.svg"]

    cox = loaded.members.get("cox")
    if cox is None:
        if cfg.plot.covariate is not None:
            raise ConfigError("partial effects need a Cox model (kind cox or an ensemble with cox)")
    else:
        cov = cfg.plot.covariate or cox.feature_names[0]
        if cov not in cox.feature_names:
            raise InputError(f"unknown covariate {cov!r}; model features: "
                             f"{', '.join(cox.feature_names)}")
        values = cfg.plot.values
        if values is None:
            X, _, _ = cohort.arrays()
            values = np.quantile(X[:, cox.feature_names.index(cov)], [0.1, 0.5, 0.9]).tolist()
        pe = coxph.partial_effect_curves(cox, cohort.records, cov, values)
        labelled = [(f"{cov}={v:.3g}", c) for v, c in zip(values, pe)]
        plotting.write_curves_csv(out / "partial_effects.csv", labelled)
        plotting.write_step_svg(out / "partial_effects.svg", labelled, f"Partial effect of {cov}")
        written += ["partial_effects.csv", "partial_effects.svg"]
    return written


def cmd_ingest(cfg: RunConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    cohort = load_cohort(cfg.data)
    enc = cohort.encoding
    enc.save(out / "encoding.json")
    with open(out / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([tabular.ID_COL, tabular.TIME_COL, tabular.EVENT_COL, *enc.features])
        for r in cohort.records:
            w.writerow([r.patient_id, repr(r.time), int(r.event), *map(repr, r.covariates.tolist())])
    report = {"rows": len(cohort.records), "rejected": cohort.table.rejected,
              "kept_columns": list(enc.kept_columns), "dropped_columns": list(enc.dropped_columns),
              "features": list(enc.features), "policy": enc.policy}
    _write_json(out / "ingest_report.json", report)
    return report


SIM_SCHEMA_EXTRAS = {"Gender": {"kind": "onehot", "levels": ["F", "M"]},
                     "Tobacco": {"kind": "ternary"}}


def cmd_simulate(cfg: RunConfig):
    """Synthetic cohort in the on-disk formats the other commands read."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    s = cfg.simulate
    if not 0 <= s.holdout < s.n:
        raise ConfigError(f"simulate.holdout must be in [0, n), got {s.holdout}")
    try:
        blob = synthetic.BlobSpec(shape=tuple(s.shape), noise_sd=s.noise_sd, contrast=s.contrast,
                                  pet_contrast=s.pet_contrast)
        spec = synthetic.SyntheticSpec(n=s.n, d=s.d, beta_true=tuple(s.beta_true),
                                       baseline_rate=s.baseline_rate, c_max=s.c_max, seed=cfg.seed,
                                       volume_mode="blob" if s.volumes else "off", blob=blob,
                                       link=s.link)
        if s.censoring is not None:
            if not 0 < s.censoring < 1:
                raise ValueError("censoring fraction must lie in (0, 1)")
            spec.c_max = synthetic.c_max_for_censoring(spec, s.censoring)
    except ValueError as exc:
        raise ConfigError(f"simulate: {exc}") from exc
    records, truth = synthetic.generate_tabular(spec)

    names = [f"x{j + 1}" for j in range(s.d)]
    columns = {n: {"kind": "numeric"} for n in names}
    rows = []
    extra_rng = np.random.default_rng([cfg.seed, 11])
    for r in records:
        row = {tabular.ID_COL: r.patient_id, tabular.TIME_COL: repr(r.time),
               tabular.EVENT_COL: int(r.event)}
        row.update({n: repr(float(v)) for n, v in zip(names, r.covariates)})
        if s.extras:
            row["Gender"] = "F" if extra_rng.random() < 0.5 else "M"
            u = extra_rng.random()
            row["Tobacco"] = "yes" if u < 0.35 else ("no" if u < 0.7 else "")
        rows.append(row)
    if s.extras:
        columns.update(SIM_SCHEMA_EXTRAS)
    _write_json(out / "schema.json", {"columns": columns, "missing": [""]})
    col_names = list(columns)
    tabular.write_ehr_csv(out / "ehr.csv", rows, col_names)
    if s.holdout:
        tabular.write_ehr_csv(out / "train.csv", rows[:-s.holdout], col_names)
        tabular.write_ehr_csv(out / "test.csv", rows[-s.holdout:], col_names)
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([tabular.ID_COL, "linear_predictor", "event_time", "censor_time"])
        for r, lp, et, ct in zip(records, truth.linear_predictor, truth.event_time,
                                 truth.censor_time):
            w.writerow([r.patient_id, repr(float(lp)), repr(float(et)), repr(float(ct))])
    if s.volumes:
        vdir = out / "volumes"
        vdir.mkdir(exist_ok=True)
        boxes = {}
        for r, (ct, pet) in zip(records, synthetic.generate_volumes(records, truth, spec)):
            for tag, v in (("ct", ct), ("pet", pet)):
                volume.save_volume(v, vdir / f"{r.patient_id}_{tag}.f32",
                                   vdir / f"{r.patient_id}.json")
            boxes[r.patient_id] = volume.BoundingBox((0, 0, 0), ct.shape)
        volume.write_bbox_csv(out / "bbox.csv", boxes)
    summary = {"n": s.n, "events": int(sum(r.event for r in records)),
               "censoring_fraction": 1 - float(np.mean([r.event for r in records])),
               "c_max": spec.c_max}
    _write_json(out / "simulation.json", summary)
    return summary

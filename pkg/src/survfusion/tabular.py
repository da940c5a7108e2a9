"""EHR CSV ingestion, covariate encoding, impute/drop policies and standardization.

Schema files are JSON::

    {"columns": {
        "Age":     {"kind": "numeric"},
        "Gender":  {"kind": "onehot", "levels": ["M", "F"]},
        "M-stage": {"kind": "ordinal", "map": {"M0": 0, "M1": 1, "Mx": 2}},
        "Tobacco": {"kind": "ternary"}},
     "missing": ["", "NA"]}

``PatientID``, ``Time`` and ``Event`` are always required.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import SurvivalRecord
from .errors import InputError

log = logging.getLogger(__name__)

ID_COL, TIME_COL, EVENT_COL = "PatientID", "Time", "Event"
DEFAULT_MISSING = ("", "na", "nan", "n/a", "null", "none", "?")
DEFAULT_POSITIVE = ("1", "yes", "y", "true", "consumer")
DEFAULT_NEGATIVE = ("-1", "0", "no", "n", "false", "non-consumer")
ENCODER_KINDS = ("numeric", "ordinal", "onehot", "ternary")
TABLE_KIND = {"numeric": "numeric", "ordinal": "categorical", "onehot": "categorical",
              "ternary": "ternary"}


class UnseenLevelWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ColumnEncoder:
    kind: str
    levels: tuple | None = None  # onehot; first level is the reference
    mapping: dict | None = None  # ordinal
    positive: tuple = DEFAULT_POSITIVE  # ternary
    negative: tuple = DEFAULT_NEGATIVE

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise InputError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "ordinal" and not self.mapping:
            raise InputError("ordinal encoder needs a 'map'")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.levels is not None:
            d["levels"] = list(self.levels)
        if self.mapping is not None:
            d["map"] = dict(self.mapping)
        if self.kind == "ternary":
            d["positive"], d["negative"] = list(self.positive), list(self.negative)
        return d

    @classmethod
    def from_dict(cls, d):
        levels = d.get("levels")
        return cls(d["kind"], tuple(levels) if levels is not None else None, d.get("map"),
                   tuple(d.get("positive", DEFAULT_POSITIVE)),
                   tuple(d.get("negative", DEFAULT_NEGATIVE)))


@dataclass(frozen=True)
class EncodingSpec:
    columns: dict
    missing: tuple = DEFAULT_MISSING
    policy: str = "impute"
    # fitted state (empty until encode has run)
    kept_columns: tuple = ()
    dropped_columns: tuple = ()
    features: tuple = ()
    means: tuple = ()
    sds: tuple = ()
    standardized: tuple = ()

    @property
    def fitted(self):
        return bool(self.features)

    @classmethod
    def from_dict(cls, d):
        cols = {name: ColumnEncoder.from_dict(c) for name, c in d["columns"].items()}
        fitted = d.get("fitted", {})
        return cls(cols, tuple(m.lower() for m in d.get("missing", DEFAULT_MISSING)),
                   d.get("policy", "impute"),
                   tuple(fitted.get("kept_columns", ())), tuple(fitted.get("dropped_columns", ())),
                   tuple(fitted.get("features", ())), tuple(fitted.get("means", ())),
                   tuple(fitted.get("sds", ())), tuple(fitted.get("standardized", ())))

    def to_dict(self):
        d = {"columns": {k: c.to_dict() for k, c in self.columns.items()},
             "missing": list(self.missing), "policy": self.policy}
        if self.fitted:
            d["fitted"] = {"kept_columns": list(self.kept_columns),
                           "dropped_columns": list(self.dropped_columns),
                           "features": list(self.features), "means": list(self.means),
                           "sds": list(self.sds), "standardized": list(self.standardized)}
        return d

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed schema {path}: {exc}") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


@dataclass
class EhrTable:
    patient_ids: list
    columns: dict  # name -> list of raw cell values (float for numeric, str, or None if missing)
    kinds: dict  # name -> numeric | categorical | ternary
    time: np.ndarray
    event: np.ndarray
    rejected: list = field(default_factory=list)  # row-level diagnostics

    def __len__(self):
        return len(self.patient_ids)

    def missing_count(self, column):
        return sum(v is None for v in self.columns[column])


def parse_ehr_csv(path, schema: EncodingSpec) -> EhrTable:
    """Read an EHR CSV. Rows with unparseable Time/Event are skipped and
    recorded in ``table.rejected``; other problems raise InputError."""
    path = Path(path)
    missing = set(schema.missing)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [ID_COL, TIME_COL, EVENT_COL] + list(schema.columns)
        absent = [c for c in needed if c not in header]
        if absent:
            raise InputError(f"{path}: missing required column(s): {', '.join(absent)}")
        ids, times, events, rejected = [], [], [], []
        cols = {c: [] for c in schema.columns}
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            pid = (row[ID_COL] or "").strip()
            if not pid:
                rejected.append(f"line {lineno}: empty {ID_COL}")
                continue
            if pid in seen:
                raise InputError(f"{path}: duplicate patient id {pid!r} at line {lineno}")
            try:
                t = float(row[TIME_COL])
                if not math.isfinite(t) or t <= 0:
                    raise ValueError(f"time must be positive, got {row[TIME_COL]!r}")
                e = float(row[EVENT_COL])
                if e not in (0.0, 1.0):
                    raise ValueError(f"event must be 0 or 1, got {row[EVENT_COL]!r}")
            except (TypeError, ValueError) as exc:
                rejected.append(f"line {lineno} ({pid}): {exc}")
                continue
            seen.add(pid)
            ids.append(pid)
            times.append(t)
            events.append(bool(e))
            for name, enc in schema.columns.items():
                raw = (row[name] or "").strip()
                if raw.lower() in missing:
                    cols[name].append(None)
                elif enc.kind == "numeric":
                    try:
                        cols[name].append(float(raw))
                    except ValueError:
                        raise InputError(f"{path}: line {lineno}, column {name}: "
                                         f"malformed numeric {raw!r}") from None
                else:
                    cols[name].append(raw)
    for msg in rejected:
        log.warning("rejected row: %s", msg)
    if not ids:
        raise InputError(f"{path}: no valid rows")
    kinds = {name: TABLE_KIND[enc.kind] for name, enc in schema.columns.items()}
    return EhrTable(ids, cols, kinds, np.array(times), np.array(events, dtype=bool), rejected)


# ---------------------------------------------------------------- encoding

def _onehot_levels(enc, values):
    if enc.levels is not None:
        return tuple(enc.levels)
    return tuple(sorted({v for v in values if v is not None}))


def _raw_block(name, enc, values, levels, counter):
    """Unstandardized feature block (n, k) and its feature names. NaN marks missing numerics."""
    n = len(values)
    if enc.kind == "numeric":
        return np.array([np.nan if v is None else v for v in values], dtype=float)[:, None], [name]
    if enc.kind == "ordinal":
        out = np.full(n, np.nan)
        for i, v in enumerate(values):
            if v is None:
                continue
            if v not in enc.mapping:
                warnings.warn(f"column {name}: unmapped level {v!r} treated as missing",
                              UnseenLevelWarning, stacklevel=4)
                counter[0] += 1
                continue
            out[i] = float(enc.mapping[v])
        return out[:, None], [name]
    if enc.kind == "ternary":
        pos = {p.lower() for p in enc.positive}
        neg = {p.lower() for p in enc.negative}
        out = np.zeros(n)
        for i, v in enumerate(values):
            if v is None:
                continue
            key = str(v).lower()
            if key in pos:
                out[i] = 1.0
            elif key in neg:
                out[i] = -1.0
            else:
                raise InputError(f"column {name}: {v!r} is neither a positive nor a negative value")
        return out[:, None], [name]
    # onehot, first level is the reference
    index = {lv: j for j, lv in enumerate(levels[1:])}
    out = np.zeros((n, len(index)))
    for i, v in enumerate(values):
        if v is None or v == levels[0]:
            continue
        if v in index:
            out[i, index[v]] = 1.0
        else:
            warnings.warn(f"column {name}: unseen level {v!r} encoded as all-zero block",
                          UnseenLevelWarning, stacklevel=4)
            counter[0] += 1
    return out, [f"{name}={lv}" for lv in levels[1:]]


def _feature_matrix(table: EhrTable, spec: EncodingSpec, kept, level_map):
    blocks, names, std_flags, counter = [], [], [], [0]
    for name in kept:
        enc = spec.columns[name]
        if name not in table.columns:
            raise InputError(f"column {name!r} required by the encoding is absent from the table")
        block, bnames = _raw_block(name, enc, table.columns[name], level_map.get(name), counter)
        blocks.append(block)
        names += bnames
        std_flags += [enc.kind in ("numeric", "ordinal")] * len(bnames)
    X = np.concatenate(blocks, axis=1) if blocks else np.zeros((len(table), 0))
    return X, names, np.array(std_flags, dtype=bool)


def _transform(X, means, sds, std_flags):
    out = X.copy()
    for j in np.flatnonzero(std_flags):
        col = out[:, j]
        col[np.isnan(col)] = means[j]
        out[:, j] = (col - means[j]) / sds[j]
    return out


def _to_records(table, X):
    return [SurvivalRecord(pid, X[i], table.time[i], bool(table.event[i]))
            for i, pid in enumerate(table.patient_ids)]


def encode(table: EhrTable, spec: EncodingSpec, policy: str | None = None):
    """Fit the encoding on ``table``. Returns ``(records, fitted_spec)``.

    ``impute``: ternary cells become +1/-1/0 (missing = 0), missing numerics take
    the training mean. ``drop``: every column with a missing cell is removed.
    """
    policy = policy or spec.policy
    if policy not in ("impute", "drop"):
        raise InputError(f"unknown missing-data policy {policy!r}")
    absent = [c for c in spec.columns if c not in table.columns]
    if absent:
        raise InputError(f"table lacks schema column(s): {', '.join(absent)}")
    if policy == "drop":
        kept = [c for c in spec.columns if table.missing_count(c) == 0]
    else:
        kept = list(spec.columns)
    dropped = [c for c in spec.columns if c not in kept]
    if dropped:
        log.info("drop policy removed columns: %s", ", ".join(dropped))

    level_map = {c: _onehot_levels(spec.columns[c], table.columns[c])
                 for c in kept if spec.columns[c].kind == "onehot"}
    columns = dict(spec.columns)
    for c, levels in level_map.items():
        columns[c] = replace(columns[c], levels=levels)
    X, names, std_flags = _feature_matrix(table, spec, kept, level_map)

    means = np.zeros(X.shape[1])
    sds = np.ones(X.shape[1])
    keep = np.ones(X.shape[1], dtype=bool)
    for j in range(X.shape[1]):
        col = X[:, j]
        present = col[~np.isnan(col)]
        if present.size == 0:
            keep[j] = False
            continue
        sd = float(np.std(present))
        if std_flags[j]:
            means[j], sds[j] = float(np.mean(present)), sd
        if sd == 0:
            keep[j] = False
    if not keep.all():
        gone = [names[j] for j in np.flatnonzero(~keep)]
        log.warning("dropping zero-variance feature(s): %s", ", ".join(gone))
    if not keep.any():
        raise InputError("no features left after encoding (all columns dropped)")

    fitted = replace(
        spec, columns=columns, policy=policy, kept_columns=tuple(kept),
        dropped_columns=tuple(dropped),
        features=tuple(n for n, k in zip(names, keep) if k),
        means=tuple(means[keep].tolist()), sds=tuple(sds[keep].tolist()),
        standardized=tuple(bool(s) for s in std_flags[keep]))
    return apply_encoding(table, fitted), fitted


def apply_encoding(table: EhrTable, fitted: EncodingSpec):
    """Transform ``table`` with training statistics; returns SurvivalRecords."""
    if not fitted.fitted:
        raise InputError("encoding spec has not been fitted")
    level_map = {c: fitted.columns[c].levels for c in fitted.kept_columns
                 if fitted.columns[c].kind == "onehot"}
    X, names, std_flags = _feature_matrix(table, fitted, fitted.kept_columns, level_map)
    pos = {n: j for j, n in enumerate(names)}
    X = X[:, [pos[f] for f in fitted.features]]
    X = _transform(X, np.array(fitted.means), np.array(fitted.sds),
                   np.array(fitted.standardized, dtype=bool))
    if np.isnan(X).any():
        raise InputError("missing values remain after encoding")
    return _to_records(table, X)


def write_ehr_csv(path, rows, columns):
    """``rows``: iterable of dicts keyed by PatientID/Time/Event plus ``columns``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=[ID_COL, TIME_COL, EVENT_COL] + list(columns))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in w.fieldnames})

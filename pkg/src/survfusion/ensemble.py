"""Average risk scores from several models (e.g. MTLR head and Cox)."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .core import RiskScore
from .errors import InputError

NORMALIZATIONS = ("zscore", "rank", "none")


@dataclass
class EnsembleSpec:
    members: list = field(default_factory=list)  # model references (paths or names)
    weights: list | None = None  # None = equal
    normalization: str = "zscore"

    def resolved_weights(self, k):
        w = np.full(k, 1.0 / k) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.size != k:
            raise InputError(f"{w.size} weights for {k} members")
        if np.any(w < 0) or w.sum() <= 0:
            raise InputError(f"ensemble weights must be non-negative with a positive sum, got {w}")
        return w / w.sum()

    def to_dict(self):
        return {"members": list(self.members), "weights": self.weights,
                "normalization": self.normalization}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"members", "weights", "normalization"}
        if unknown:
            raise InputError(f"unknown ensemble keys: {sorted(unknown)}")
        return cls(list(d.get("members", [])), d.get("weights"), d.get("normalization", "zscore"))


def standardize_values(values, method="zscore"):
    v = np.asarray(values, dtype=float)
    if method == "none":
        return v.copy()
    if method == "zscore":
        sd = v.std()
        if sd == 0:
            raise InputError("constant risks cannot be z-scored; use normalization 'rank' or 'none'")
        return (v - v.mean()) / sd
    if method == "rank":
        if v.size == 1:
            return np.zeros(1)
        return (rankdata(v, method="average") - 1.0) / (v.size - 1)
    raise InputError(f"unknown normalization {method!r}; expected one of {NORMALIZATIONS}")


def standardize_risks(risks: Sequence[RiskScore], method="zscore") -> list[RiskScore]:
    vals = standardize_values([r.value for r in risks], method)
    return [RiskScore(r.patient_id, v) for r, v in zip(risks, vals)]


def average_risks(member_risks: Sequence[Sequence[RiskScore]], spec: EnsembleSpec | None = None):
    """Per-patient weighted mean of normalized member risks, in the first member's order."""
    spec = spec or EnsembleSpec()
    if not member_risks:
        raise InputError("no ensemble members")
    ids = [r.patient_id for r in member_risks[0]]
    id_set = set(ids)
    if len(id_set) != len(ids):
        raise InputError("duplicate patient ids in ensemble member 0")
    weights = spec.resolved_weights(len(member_risks))
    total = np.zeros(len(ids))
    for k, (member, w) in enumerate(zip(member_risks, weights)):
        by_id = {r.patient_id: r for r in member}
        missing = sorted(id_set - set(by_id))
        extra = sorted(set(by_id) - id_set)
        if missing or extra or len(by_id) != len(member):
            raise InputError(f"ensemble member {k} patient set mismatch: missing {missing[:10]}, "
                             f"unexpected {extra[:10]}")
        aligned = standardize_risks([by_id[i] for i in ids], spec.normalization)
        total += w * np.array([r.value for r in aligned])
    return [RiskScore(i, v) for i, v in zip(ids, total)]


def write_risk_csv(path, risks: Sequence[RiskScore]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["PatientID", "Risk"])
        for r in risks:
            w.writerow([r.patient_id, repr(r.value)])


def read_risk_csv(path) -> list[RiskScore]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"PatientID", "Risk"} <= set(reader.fieldnames):
            raise InputError(f"{path}: expected columns PatientID,Risk")
        for row in reader:
            try:
                out.append(RiskScore(row["PatientID"], float(row["Risk"])))
            except ValueError as exc:
                raise InputError(f"{path}: bad risk row {row}: {exc}") from exc
    return out


def load_spec(path) -> EnsembleSpec:
    return EnsembleSpec.from_dict(json.loads(Path(path).read_text()))

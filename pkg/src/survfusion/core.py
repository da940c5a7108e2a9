"""Survival types, Kaplan-Meier, time grids and Harrell's concordance index."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, UndefinedCIndexError


@dataclass(frozen=True)
class SurvivalRecord:
    patient_id: str
    covariates: np.ndarray = field(repr=False)
    time: float
    event: bool

    def __post_init__(self):
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim != 1:
            raise InputError(f"{self.patient_id}: covariates must be a vector, got shape {cov.shape}")
        cov.setflags(write=False)
        object.__setattr__(self, "covariates", cov)
        t = float(self.time)
        if not math.isfinite(t) or t <= 0:
            raise InputError(f"{self.patient_id}: time must be finite and > 0, got {self.time!r}")
        object.__setattr__(self, "time", t)
        if not isinstance(self.event, (bool, np.bool_)) and self.event not in (0, 1):
            raise InputError(f"{self.patient_id}: event must be boolean, got {self.event!r}")
        object.__setattr__(self, "event", bool(self.event))


@dataclass(frozen=True)
class TimeGrid:
    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).ravel()
        if p.size < 1:
            raise InputError("time grid needs at least one point")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise InputError("time grid points must be finite and positive")
        if np.any(np.diff(p) <= 0):
            raise InputError("time grid must be strictly increasing")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self):
        return self.points.size


@dataclass(frozen=True)
class SurvivalCurve:
    times: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.probabilities, dtype=float)
        if t.shape != s.shape:
            raise InputError("curve times and probabilities differ in length")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "probabilities", s)

    def __call__(self, t):
        """Right-continuous step evaluation."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.probabilities[np.clip(idx, 0, None)]


@dataclass(frozen=True)
class RiskScore:
    patient_id: str
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v):
            raise InputError(f"{self.patient_id}: risk must be finite, got {self.value!r}")
        object.__setattr__(self, "value", v)


def records_to_arrays(records: Sequence[SurvivalRecord]):
    """Stack a cohort into ``(X, time, event)`` arrays."""
    if not records:
        raise InputError("empty cohort")
    d = records[0].covariates.size
    for r in records:
        if r.covariates.size != d:
            raise InputError(
                f"{r.patient_id}: expected {d} covariates, got {r.covariates.size}")
    X = np.stack([r.covariates for r in records]) if d else np.zeros((len(records), 0))
    time = np.array([r.time for r in records])
    event = np.array([r.event for r in records], dtype=bool)
    return X, time, event


def harrell_c(risk, time, event):
    """Harrell's C on arrays. Returns ``(c_index, n_comparable_pairs)``.

    A pair (i, j) is comparable when ``time[i] < time[j]`` and i had the event.
    Risk ties earn half credit.
    """
    risk = np.asarray(risk, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    comparable = (time[:, None] < time[None, :]) & event[:, None]
    n_pairs = int(comparable.sum())
    if n_pairs == 0:
        raise UndefinedCIndexError("undefined C-index: no comparable pairs")
    diff = risk[:, None] - risk[None, :]
    score = np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))
    return float(score[comparable].sum() / n_pairs), n_pairs


def _align_risks(risks: Sequence[RiskScore], records: Sequence[SurvivalRecord]):
    by_id = {}
    for r in risks:
        if r.patient_id in by_id:
            raise InputError(f"duplicate risk for patient {r.patient_id}")
        by_id[r.patient_id] = r.value
    missing = [rec.patient_id for rec in records if rec.patient_id not in by_id]
    if missing:
        raise InputError(f"no risk for patients: {', '.join(missing[:10])}")
    extra = set(by_id) - {rec.patient_id for rec in records}
    if extra:
        raise InputError(f"risks for unknown patients: {', '.join(sorted(extra)[:10])}")
    return np.array([by_id[rec.patient_id] for rec in records])


def concordance_index(risks: Sequence[RiskScore], records: Sequence[SurvivalRecord]) -> float:
    return concordance_report(risks, records)[0]


def concordance_report(risks, records):
    """Like :func:`concordance_index` but also returns the comparable-pair count."""
    values = _align_risks(risks, records)
    time = np.array([r.time for r in records])
    event = np.array([r.event for r in records], dtype=bool)
    return harrell_c(values, time, event)


def kaplan_meier(records: Sequence[SurvivalRecord]) -> SurvivalCurve:
    """Product-limit estimate evaluated at every distinct observed time."""
    if not records:
        raise InputError("Kaplan-Meier needs a nonempty cohort")
    time = np.array([r.time for r in records])
    event = np.array([r.event for r in records], dtype=bool)
    return kaplan_meier_arrays(time, event)


def kaplan_meier_arrays(time, event) -> SurvivalCurve:
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    uniq, inverse = np.unique(time, return_inverse=True)
    deaths = np.bincount(inverse, weights=event.astype(float), minlength=uniq.size)
    leaving = np.bincount(inverse, minlength=uniq.size)
    at_risk = time.size - np.concatenate([[0], np.cumsum(leaving)[:-1]])
    surv = np.cumprod(1.0 - deaths / at_risk)
    return SurvivalCurve(np.concatenate([[0.0], uniq]), np.concatenate([[1.0], surv]))


def make_time_grid(records: Sequence[SurvivalRecord], m: int | str = "auto") -> TimeGrid:
    """Place grid points at the j/(m+1) quantiles of the observed event times.

    ``m="auto"`` uses ceil(sqrt(#events)). Tied quantiles collapse, so the
    returned grid may be shorter than ``m``.
    """
    event_times = np.array([r.time for r in records if r.event])
    return time_grid_from_event_times(event_times, m)


def time_grid_from_event_times(event_times, m: int | str = "auto") -> TimeGrid:
    event_times = np.sort(np.asarray(event_times, dtype=float))
    if event_times.size == 0:
        raise InputError("cannot build a time grid without events")
    if m == "auto" or m is None:
        m = math.ceil(math.sqrt(event_times.size))
    m = int(m)
    if m < 1:
        raise InputError(f"grid size must be positive, got {m}")
    q = np.arange(1, m + 1) / (m + 1)
    return TimeGrid(np.unique(np.quantile(event_times, q)))

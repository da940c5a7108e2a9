"""Synthetic proportional-hazards cohorts, optionally with CT/PET-like blob volumes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .core import SurvivalRecord
from .volume import Volume


@dataclass
class BlobSpec:
    shape: tuple = (16, 24, 24)  # (D, H, W)
    radius_min: float = 2.0
    radius_max: float = 6.0
    contrast: float = 1.0
    noise_sd: float = 0.1
    pet_contrast: float = 2.0
    risk_scale: float = 1.0  # risk that maps to the 84th-percentile radius


@dataclass
class SyntheticSpec:
    n: int = 200
    d: int = 3
    beta_true: tuple = (1.0, -0.5, 0.0)
    baseline_rate: float = 0.01  # per day
    c_max: float = 400.0  # days
    seed: int = 0
    volume_mode: str = "off"  # off | blob
    blob: BlobSpec = field(default_factory=BlobSpec)
    # "linear" keeps proportional hazards; "abs" uses |beta . x| as the log-hazard
    link: str = "linear"

    def __post_init__(self):
        if self.baseline_rate <= 0 or self.c_max <= 0:
            raise ValueError("baseline_rate and c_max must be positive")
        if len(self.beta_true) != self.d:
            raise ValueError(f"beta_true has {len(self.beta_true)} entries, d={self.d}")


@dataclass
class GroundTruth:
    linear_predictor: np.ndarray
    event_time: np.ndarray
    censor_time: np.ndarray
    X: np.ndarray

    @property
    def log_hazard(self):
        return self.linear_predictor


def _log_hazard(spec, X):
    lp = X @ np.asarray(spec.beta_true, dtype=float)
    return np.abs(lp) if spec.link == "abs" else lp


def generate_tabular(spec: SyntheticSpec):
    """Returns ``(records, truth)``; identical for identical specs."""
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n, spec.d))
    lp = _log_hazard(spec, X)
    u = rng.random(spec.n)
    event_time = -np.log1p(-u) / (spec.baseline_rate * np.exp(lp))
    censor_time = rng.uniform(0.0, spec.c_max, spec.n)
    observed = np.minimum(event_time, censor_time)
    # a censoring draw of exactly 0 would give a non-positive time
    observed = np.maximum(observed, np.finfo(float).tiny)
    event = event_time <= censor_time
    width = len(str(spec.n))
    records = [SurvivalRecord(f"P{i:0{width}d}", X[i], observed[i], bool(event[i]))
               for i in range(spec.n)]
    return records, GroundTruth(lp, event_time, censor_time, X)


def expected_censoring(spec: SyntheticSpec, n_mc=20000):
    """P(censored) = E_x[(1 - exp(-r c)) / (r c)] with r = rate * exp(lp); Monte Carlo over x."""
    X = np.random.default_rng(12345).standard_normal((n_mc, spec.d))
    rc = spec.baseline_rate * np.exp(_log_hazard(spec, X)) * spec.c_max
    return float(np.mean(-np.expm1(-rc) / rc))


def c_max_for_censoring(spec: SyntheticSpec, fraction: float):
    """Uniform-censoring bound giving the requested expected censored fraction."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")

    def gap(log_c):
        s = SyntheticSpec(**{**spec.__dict__, "c_max": float(np.exp(log_c))})
        return expected_censoring(s) - fraction

    scale = -np.log(spec.baseline_rate)
    return float(np.exp(optimize.brentq(gap, scale - 20, scale + 20)))


def blob_radius(risk, spec: BlobSpec):
    """Monotone map from risk to blob radius in voxels (normal-CDF squashing)."""
    p = special.ndtr(np.asarray(risk, dtype=float) / spec.risk_scale)
    return spec.radius_min + (spec.radius_max - spec.radius_min) * p


def _blob_mask(shape, radius):
    grids = np.indices(shape, dtype=float)
    center = (np.asarray(shape, dtype=float) - 1) / 2
    dist2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    return dist2 <= radius ** 2


def generate_volumes(records, truth: GroundTruth, spec: SyntheticSpec):
    """One ``(ct, pet)`` Volume pair per record, with blob radius increasing in risk."""
    if spec.volume_mode != "blob":
        raise ValueError("generate_volumes needs volume_mode='blob'")
    b = spec.blob
    radii = blob_radius(truth.linear_predictor, b)
    children = np.random.SeedSequence([spec.seed, 7]).spawn(len(records))
    out = []
    for rec, radius, child in zip(records, radii, children):
        rng = np.random.default_rng(child)
        mask = _blob_mask(b.shape, radius).astype(float)
        ct = b.contrast * mask + b.noise_sd * rng.standard_normal(b.shape)
        pet = b.pet_contrast * mask + b.noise_sd * rng.standard_normal(b.shape)
        out.append((Volume(ct), Volume(pet)))
    return out

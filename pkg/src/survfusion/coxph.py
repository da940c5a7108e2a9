"""Cox proportional hazards with Breslow ties, Newton-Raphson fitting and
partial-effect curves."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import RiskScore, SurvivalCurve, SurvivalRecord, records_to_arrays
from .errors import ConvergenceError, InputError

log = logging.getLogger(__name__)


def _risk_set_sums(X, time, w):
    """Risk-set sums S0, S1, S2 at each subject's own time (ties share the full set)."""
    order = np.argsort(-time, kind="stable")
    t_sorted = time[order]
    ws = w[order]
    Xs = X[order]
    s0 = np.cumsum(ws)
    s1 = np.cumsum(ws[:, None] * Xs, axis=0)
    s2 = np.cumsum(ws[:, None, None] * Xs[:, :, None] * Xs[:, None, :], axis=0)
    # last position of each tie block in descending order holds the full risk set
    last = np.searchsorted(-t_sorted, -t_sorted, side="right") - 1
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    pick = last[inv]
    return s0[pick], s1[pick], s2[pick]


def neg_log_partial_likelihood(beta, X, time, event):
    """Breslow negative log partial likelihood with analytic gradient and Hessian."""
    X = np.asarray(X, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if not event.any():
        raise InputError("partial likelihood needs at least one event")
    beta = np.asarray(beta, dtype=float)
    eta = X @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    s0, s1, s2 = _risk_set_sums(X, time, w)
    s0, s1, s2 = s0[event], s1[event], s2[event]
    mean = s1 / s0[:, None]
    value = -float(np.sum(eta[event] - shift - np.log(s0)))
    grad = -np.sum(X[event] - mean, axis=0)
    hess = np.sum(s2 / s0[:, None, None] - mean[:, :, None] * mean[:, None, :], axis=0)
    return value, grad, hess


@dataclass
class CoxConfig:
    max_iter: int = 100
    tol: float = 1e-8
    ridge: float = 0.0
    # information collapse below this fraction of the start value flags separation
    separation_ratio: float = 1e-6


@dataclass
class CoxModel:
    beta: np.ndarray
    feature_names: list
    x_mean: np.ndarray
    baseline_times: np.ndarray
    baseline_cumhaz: np.ndarray  # at x_mean
    converged: bool = True
    iterations: int = 0
    grad_norm: float = 0.0
    trace: list = field(default_factory=list)

    @property
    def fitted(self):
        return True

    def baseline_survival(self) -> SurvivalCurve:
        return SurvivalCurve(np.concatenate([[0.0], self.baseline_times]),
                             np.concatenate([[1.0], np.exp(-self.baseline_cumhaz)]))

    def survival_curve(self, x) -> SurvivalCurve:
        base = self.baseline_survival()
        factor = np.exp(float(self.beta @ (np.asarray(x, dtype=float) - self.x_mean)))
        return SurvivalCurve(base.times, base.probabilities ** factor)

    def to_dict(self):
        return {"beta": dict(zip(self.feature_names, self.beta.tolist())),
                "feature_names": list(self.feature_names),
                "x_mean": self.x_mean.tolist(),
                "baseline": [[t, h] for t, h in zip(self.baseline_times.tolist(),
                                                    self.baseline_cumhaz.tolist())],
                "converged": self.converged, "iterations": self.iterations,
                "grad_norm": self.grad_norm}

    @classmethod
    def from_dict(cls, d):
        names = d["feature_names"]
        base = np.asarray(d["baseline"], dtype=float).reshape(-1, 2)
        return cls(np.array([d["beta"][n] for n in names]), names, np.asarray(d["x_mean"]),
                   base[:, 0], base[:, 1], d.get("converged", True), d.get("iterations", 0),
                   d.get("grad_norm", 0.0))


def breslow_baseline(beta, X, time, event, x_ref):
    """Breslow cumulative hazard at covariate profile ``x_ref``, at distinct event times."""
    w = np.exp((X - x_ref) @ beta)
    ev_times, deaths = np.unique(time[event], return_counts=True)
    # sum of w over {time >= t} via a reverse cumulative sum over sorted times
    order = np.argsort(time)
    tail = np.cumsum(w[order][::-1])[::-1]
    at_risk = tail[np.searchsorted(time[order], ev_times, side="left")]
    return ev_times, np.cumsum(deaths / at_risk)


def fit_cox(records: Sequence[SurvivalRecord], config: CoxConfig | None = None,
            feature_names=None) -> CoxModel:
    X, time, event = records_to_arrays(records)
    return fit_cox_arrays(X, time, event, config, feature_names)


def fit_cox_arrays(X, time, event, config: CoxConfig | None = None, feature_names=None):
    """Newton-Raphson with step halving on the (optionally ridge-penalized) objective."""
    config = config or CoxConfig()
    n, d = X.shape
    if int(np.sum(event)) < 2:
        raise InputError("Cox fitting needs at least two events")
    const = np.ptp(X, axis=0) == 0 if n else np.zeros(d, bool)
    if np.any(const):
        raise InputError(f"constant feature(s) at columns {np.flatnonzero(const).tolist()}")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(d)]

    def objective(b):
        v, g, h = neg_log_partial_likelihood(b, X, time, event)
        r = config.ridge
        return v + 0.5 * r * b @ b, g + r * b, h + r * np.eye(d)

    beta = np.zeros(d)
    value, grad, hess = objective(beta)
    info0 = np.linalg.eigvalsh(hess).max()
    trace = [{"iter": 0, "loss": value, "grad_norm": float(np.abs(grad).max())}]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        if np.abs(grad).max() < config.tol:
            converged = True
            it -= 1
            break
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Hessian; retry with ridge > 0", trace) from None
        if not np.all(np.isfinite(step)):
            raise ConvergenceError("singular Hessian; retry with ridge > 0", trace)
        t = 1.0
        for _ in range(60):
            cand = beta - t * step
            c_val, c_grad, c_hess = objective(cand)
            if np.isfinite(c_val) and c_val <= value + 1e-12 * abs(value):
                break
            t *= 0.5
        else:
            raise ConvergenceError("step halving failed to decrease the loss", trace)
        beta, value, grad, hess = cand, c_val, c_grad, c_hess
        trace.append({"iter": it, "loss": value, "grad_norm": float(np.abs(grad).max()),
                      "step": t})
    else:
        if np.abs(grad).max() < config.tol:
            converged = True
    if not converged:
        raise ConvergenceError(
            f"Newton-Raphson did not converge in {config.max_iter} iterations "
            f"(|grad|={np.abs(grad).max():.3g})", trace)
    info = np.linalg.eigvalsh(hess).min()
    if info < config.separation_ratio * info0:
        raise ConvergenceError(
            "monotone likelihood: information collapsed at the optimum "
            f"(min eigenvalue {info:.3g}); coefficients are diverging, retry with ridge > 0",
            trace)
    x_mean = X.mean(axis=0)
    bt, bh = breslow_baseline(beta, X, time, event, x_mean)
    return CoxModel(beta, names, x_mean, bt, bh, True, it, float(np.abs(grad).max()), trace)


def predict_risk(model: CoxModel, records: Sequence[SurvivalRecord]) -> list[RiskScore]:
    X, _, _ = records_to_arrays(records)
    return [RiskScore(r.patient_id, v) for r, v in zip(records, linear_predictor(model, X))]


def linear_predictor(model: CoxModel, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.beta.size:
        raise InputError(f"expected {model.beta.size} features, got {X.shape[1]}")
    return X @ model.beta


def partial_effect_curves(model: CoxModel, records, covariate, values) -> list[SurvivalCurve]:
    """Survival curves with ``covariate`` set to each value and others at the cohort mean."""
    try:
        j = model.feature_names.index(covariate)
    except ValueError:
        raise InputError(f"unknown covariate {covariate!r}") from None
    X, _, _ = records_to_arrays(records)
    x_bar = X.mean(axis=0)
    base = model.baseline_survival()
    # the stored baseline sits at the training mean; re-reference to this cohort's mean
    offset = float(model.beta @ (x_bar - model.x_mean))
    curves = []
    for v in values:
        x_v = x_bar.copy()
        x_v[j] = v
        expo = np.exp(float(model.beta @ (x_v - x_bar)) + offset)
        curves.append(SurvivalCurve(base.times, base.probabilities ** expo))
    return curves

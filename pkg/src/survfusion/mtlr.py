"""Multi-task logistic regression (MTLR) survival model, vanilla and neural.

Conventions. With grid points t_1 < ... < t_m, a label sequence is indexed by
k in {0..m}: y_j = 1 iff j > k, i.e. the event happened in (t_k, t_{k+1}]
(t_0 = 0, t_{m+1} = inf). The score of sequence k is

    f(x, k) = sum_{j > k} (theta_j . x + b_j)

and P(k | x) is the softmax of f over all m + 1 sequences. A patient censored
at c contributes the probability mass of every sequence whose interval ends
after c.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .core import RiskScore, SurvivalCurve, SurvivalRecord, TimeGrid, harrell_c, records_to_arrays
from .errors import ConvergenceError, InputError


@dataclass(frozen=True)
class MtlrParams:
    theta: np.ndarray  # (m, d)
    bias: np.ndarray  # (m,)
    grid: TimeGrid
    c_reg: float = 1.0

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        bias = np.asarray(self.bias, dtype=float).ravel()
        m = len(self.grid)
        if theta.shape[0] != m or bias.shape != (m,):
            raise InputError(f"theta/bias rows must equal grid length {m}, "
                             f"got {theta.shape} and {bias.shape}")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(bias))):
            raise InputError("MTLR parameters must be finite")
        if self.c_reg < 0:
            raise InputError(f"c_reg must be >= 0, got {self.c_reg}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "bias", bias)

    @classmethod
    def zeros(cls, grid, d, c_reg=1.0):
        return cls(np.zeros((len(grid), d)), np.zeros(len(grid)), grid, c_reg)

    @property
    def m(self):
        return len(self.grid)

    def to_dict(self):
        return {"grid": self.grid.points.tolist(), "theta": self.theta.tolist(),
                "bias": self.bias.tolist(), "c_reg": self.c_reg}

    @classmethod
    def from_dict(cls, d):
        m = len(d["grid"])
        theta = np.asarray(d["theta"], dtype=float).reshape(m, -1)
        return cls(theta, d["bias"], TimeGrid(d["grid"]), d["c_reg"])


def label_sequence(k: int, m: int) -> np.ndarray:
    """Monotone 0/1 vector of length ``m`` with y_j = 1 iff j > k."""
    if not 0 <= k <= m:
        raise InputError(f"interval index {k} outside 0..{m}")
    return (np.arange(1, m + 1) > k).astype(int)


def interval_index(grid_points, time, event):
    """Event patients: k = #{t_j < s}. Censored: first consistent k = #{t_j <= c}."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    left = np.searchsorted(grid_points, time, side="left")
    right = np.searchsorted(grid_points, time, side="right")
    return np.where(event, left, right)


def sequence_scores(z):
    """All sequence scores ``F[:, k] = sum_{j > k} z_j`` from per-point scores ``z`` (n, m)."""
    n = z.shape[0]
    tail = np.cumsum(z[:, ::-1], axis=1)[:, ::-1]
    return np.concatenate([tail, np.zeros((n, 1))], axis=1)


def sequence_score(params: MtlrParams, x, k: int) -> float:
    if not 0 <= k <= params.m:
        raise InputError(f"interval index {k} outside 0..{params.m}")
    x = np.asarray(x, dtype=float)
    return float(np.sum(params.theta[k:] @ x + params.bias[k:]))


def _logsumexp(a, axis=1):
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        return (amax + np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True))).squeeze(axis)


def nll_from_scores(z, k_idx, event):
    """Summed censored negative log-likelihood and its gradient w.r.t. ``z``."""
    n, m = z.shape
    F = sequence_scores(z)
    ks = np.arange(m + 1)
    consistent = np.where(event[:, None], ks[None, :] == k_idx[:, None], ks[None, :] >= k_idx[:, None])
    F_num = np.where(consistent, F, -np.inf)
    log_z = _logsumexp(F)
    log_num = _logsumexp(F_num)
    value = float(np.sum(log_z - log_num))
    P = np.exp(F - log_z[:, None])
    Q = np.exp(F_num - log_num[:, None])
    dz = np.cumsum(P, axis=1)[:, :m] - np.cumsum(Q, axis=1)[:, :m]
    return value, dz


def _prepare(records, grid):
    X, time, event = records_to_arrays(records)
    if not (np.all(np.isfinite(X))):
        raise InputError("non-finite covariates")
    return X, interval_index(grid.points, time, event), event


def mtlr_objective(theta, bias, c_reg, X, k_idx, event):
    z = X @ theta.T + bias
    nll, dz = nll_from_scores(z, k_idx, event)
    value = 0.5 * c_reg * float(np.sum(theta * theta)) + nll
    return value, dz.T @ X + c_reg * theta, dz.sum(axis=0)


def mtlr_loss(params: MtlrParams, records: Sequence[SurvivalRecord]):
    """Regularized loss and gradient ``(value, (grad_theta, grad_bias))``."""
    if not records:
        raise InputError("empty cohort")
    X, k_idx, event = _prepare(records, params.grid)
    value, g_theta, g_bias = mtlr_objective(params.theta, params.bias, params.c_reg, X, k_idx, event)
    return value, (g_theta, g_bias)


# ---------------------------------------------------------------- prediction

def interval_probabilities_from_scores(z):
    F = sequence_scores(z)
    return np.exp(F - _logsumexp(F)[:, None])


def survival_from_scores(z):
    """S(t_j) = P(k >= j) for j = 1..m, shape (n, m)."""
    P = interval_probabilities_from_scores(z)
    tail = np.cumsum(P[:, ::-1], axis=1)[:, ::-1]
    return np.clip(tail[:, 1:], 0.0, 1.0)


def risk_from_scores(z):
    """Cumulative incidence mass over the grid: sum_j (1 - S(t_j))."""
    return np.sum(1.0 - survival_from_scores(z), axis=1)


def _scores(params, X):
    return np.atleast_2d(X) @ params.theta.T + params.bias


def interval_probabilities(params: MtlrParams, x):
    return interval_probabilities_from_scores(_scores(params, np.asarray(x, dtype=float)))[0]


def predict_survival_curve(params: MtlrParams, x) -> SurvivalCurve:
    s = survival_from_scores(_scores(params, np.asarray(x, dtype=float)))[0]
    return SurvivalCurve(np.concatenate([[0.0], params.grid.points]), np.concatenate([[1.0], s]))


def risk_scores(params: MtlrParams, X) -> np.ndarray:
    return risk_from_scores(_scores(params, np.asarray(X, dtype=float)))


def predict_risk(params: MtlrParams, records: Sequence[SurvivalRecord]) -> list[RiskScore]:
    X, _, _ = records_to_arrays(records)
    return [RiskScore(r.patient_id, v) for r, v in zip(records, risk_scores(params, X))]


# ---------------------------------------------------------------- fitting

@dataclass
class MtlrConfig:
    c_reg: float = 1.0
    lr: float = 0.016
    epochs: int = 100
    batch_size: int = 16
    optimizer: str = "adam"  # adam | sgd
    seed: int = 0
    full_batch: bool = False


def minibatches(n, batch_size, rng, full_batch=False):
    """Index batches for one epoch. A trailing singleton joins the previous batch."""
    if full_batch or batch_size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batches[-1].size == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def _make_stepper(config, lr=None):
    lr = config.lr if lr is None else lr
    if config.optimizer == "adam":
        state = nn.AdamState(lr=lr)
        return lambda params, grads: nn.adam_step(state, params, grads)
    if config.optimizer == "sgd":
        def sgd(params, grads):
            for p, g in zip(params, grads):
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError("non-finite gradient")
                p -= lr * g
        return sgd
    raise InputError(f"unknown optimizer {config.optimizer!r}")


def _check_finite(value, epoch, trace):
    if not np.isfinite(value):
        raise ConvergenceError(f"MTLR training diverged at epoch {epoch} (loss={value})", trace)


def fit_mtlr(records, grid: TimeGrid, config: MtlrConfig | None = None):
    """Fit a linear MTLR by (mini-batch) Adam. Returns ``(params, loss_trace)``.

    Each step minimizes the per-patient objective
    ``(n/|B| * sum_B NLL + C/2 ||theta||^2) / n``; the trace records the full
    objective divided by n after every epoch.
    """
    config = config or MtlrConfig()
    X, k_idx, event = _prepare(records, grid)
    if not event.any():
        raise InputError("MTLR needs at least one event")
    n, d = X.shape
    theta = np.zeros((len(grid), d))
    bias = np.zeros(len(grid))
    rng = np.random.default_rng(config.seed)
    step = _make_stepper(config)
    trace = []
    for epoch in range(config.epochs):
        for idx in minibatches(n, config.batch_size, rng, config.full_batch):
            _, gt, gb = mtlr_objective(theta, bias, config.c_reg * idx.size / n,
                                       X[idx], k_idx[idx], event[idx])
            try:
                step([theta, bias], [gt / idx.size, gb / idx.size])
            except FloatingPointError:
                raise ConvergenceError(f"MTLR training diverged at epoch {epoch}", trace) from None
        value = mtlr_objective(theta, bias, config.c_reg, X, k_idx, event)[0] / n
        _check_finite(value, epoch, trace)
        trace.append(value)
    return MtlrParams(theta, bias, grid, config.c_reg), trace


# ---------------------------------------------------------------- neural MTLR

def encoder_specs(in_dim, hidden=(256, 256), dropout=0.2):
    """FC -> ReLU blocks with dropout between consecutive blocks."""
    specs, prev = [], in_dim
    for i, width in enumerate(hidden):
        if i > 0 and dropout > 0:
            specs.append(nn.Dropout(dropout))
        specs += [nn.Linear(prev, width), nn.ReLU()]
        prev = width
    return specs


class NeuralMtlrModel:
    """FC encoder followed by a single MTLR head."""

    def __init__(self, encoder: nn.Sequential, in_dim: int, grid: TimeGrid, c_reg=1.0):
        self.encoder = encoder
        self.in_dim = in_dim
        out = encoder.output_shape((in_dim,)) if encoder.specs else (in_dim,)
        if len(out) != 1:
            raise InputError(f"encoder must output feature vectors, got shape {out}")
        self.grid = grid
        self.c_reg = c_reg
        self.theta = np.zeros((len(grid), out[0]))
        self.bias = np.zeros(len(grid))
        self._h = None

    @property
    def head(self):
        return MtlrParams(self.theta, self.bias, self.grid, self.c_reg)

    def parameters(self, include_encoder=True):
        enc = self.encoder.parameters() if include_encoder else []
        return enc + [self.theta, self.bias]

    def scores(self, X, train=False, rng=None):
        h = self.encoder.forward(X, train=train, rng=rng)
        self._h = h
        return h @ self.theta.T + self.bias

    def loss_and_grad(self, X, k_idx, event, train=True, rng=None, reg_scale=1.0):
        """Forward + backward. Gradients land in ``self.gradients()``; returns
        ``(value, grad_input)``."""
        z = self.scores(X, train=train, rng=rng)
        h = self._h
        nll, dz = nll_from_scores(z, k_idx, event)
        c = self.c_reg * reg_scale
        value = nll + 0.5 * c * float(np.sum(self.theta ** 2))
        self._g_theta = dz.T @ h + c * self.theta
        self._g_bias = dz.sum(axis=0)
        grad_in = self.encoder.backward(dz @ self.theta) if self.encoder.specs else dz @ self.theta
        return value, grad_in

    def gradients(self, include_encoder=True):
        enc = self.encoder.gradients() if include_encoder else []
        return enc + [self._g_theta, self._g_bias]

    def risk(self, X):
        return risk_from_scores(self.scores(np.asarray(X, dtype=float), train=False))

    def predict_risk(self, records):
        X, _, _ = records_to_arrays(records)
        return [RiskScore(r.patient_id, v) for r, v in zip(records, self.risk(X))]

    def predict_survival_curve(self, x):
        s = survival_from_scores(self.scores(np.atleast_2d(x), train=False))[0]
        return SurvivalCurve(np.concatenate([[0.0], self.grid.points]), np.concatenate([[1.0], s]))

    def state_dict(self):
        state = self.encoder.state_dict("encoder.")
        state["head.theta"] = self.theta
        state["head.bias"] = self.bias
        return state

    def load_state_dict(self, state):
        self.encoder.load_state_dict(state, "encoder.")
        self.theta[...] = state["head.theta"]
        self.bias[...] = state["head.bias"]

    def manifest(self):
        return {"in_dim": self.in_dim, "grid": self.grid.points.tolist(), "c_reg": self.c_reg,
                "encoder": self.encoder.to_dicts()}

    @classmethod
    def from_manifest(cls, manifest, state=None):
        enc = nn.Sequential([nn.spec_from_dict(s) for s in manifest["encoder"]])
        model = cls(enc, manifest["in_dim"], TimeGrid(manifest["grid"]), manifest["c_reg"])
        if state is not None:
            model.load_state_dict(state)
        return model


@dataclass
class NeuralMtlrConfig(MtlrConfig):
    hidden: tuple = (256, 256)
    dropout: float = 0.2
    freeze_encoder: bool = False


def build_neural_mtlr(in_dim, grid, config: NeuralMtlrConfig):
    rng = np.random.default_rng(config.seed)
    enc = nn.Sequential(encoder_specs(in_dim, config.hidden, config.dropout), rng)
    return NeuralMtlrModel(enc, in_dim, grid, config.c_reg)


def train_neural_mtlr(model: NeuralMtlrModel, X, k_idx, event, config: NeuralMtlrConfig):
    """Adam over encoder + head; returns the per-epoch mean objective trace."""
    n = X.shape[0]
    rng = np.random.default_rng(config.seed + 1)
    include = not config.freeze_encoder
    step = _make_stepper(config)
    trace = []
    for epoch in range(config.epochs):
        for idx in minibatches(n, config.batch_size, rng, config.full_batch):
            model.loss_and_grad(X[idx], k_idx[idx], event[idx], train=True, rng=rng,
                                reg_scale=idx.size / n)
            grads = [g / idx.size for g in model.gradients(include)]
            try:
                step(model.parameters(include), grads)
            except FloatingPointError:
                raise ConvergenceError(f"neural MTLR diverged at epoch {epoch}", trace) from None
        z = model.scores(X, train=False)
        value = (nll_from_scores(z, k_idx, event)[0]
                 + 0.5 * model.c_reg * float(np.sum(model.theta ** 2))) / n
        _check_finite(value, epoch, trace)
        trace.append(value)
    return trace


def fit_neural_mtlr(records, grid: TimeGrid, config: NeuralMtlrConfig | None = None):
    """Build and train a neural MTLR. Returns ``(model, loss_trace)``."""
    config = config or NeuralMtlrConfig()
    X, k_idx, event = _prepare(records, grid)
    if not event.any():
        raise InputError("MTLR needs at least one event")
    model = build_neural_mtlr(X.shape[1], grid, config)
    trace = train_neural_mtlr(model, X, k_idx, event, config)
    return model, trace


def training_cindex(risk, records):
    X, time, event = records_to_arrays(records)
    return harrell_c(risk, time, event)[0]

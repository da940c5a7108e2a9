"""Deep Fusion: 3D CNN image paths + EHR features -> FC layers -> MTLR head.

V2 has one path over the fused CT/PET volume; V1 has three independent paths
(CT, PET, fused) whose 256-length features are concatenated.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn
from .core import RiskScore, TimeGrid, harrell_c
from .errors import ConvergenceError, InputError
from .mtlr import (NeuralMtlrModel, _make_stepper, encoder_specs, interval_index,
                   minibatches, nll_from_scores, risk_from_scores)

PATHS = {"v1": ("ct", "pet", "fused"), "v2": ("fused",)}


@dataclass
class FusionConfig:
    variant: str = "v2"
    profile: str = "desk"
    channels: tuple = (4, 4, 8, 8)
    kernels: tuple = (3, 5)
    feature_len: int = 16
    fc_widths: tuple = (16, 16)
    input_shape: tuple = (16, 16, 16)  # (D, H, W)
    dropout: float = 0.2
    batch_size: int = 16
    lr: float = 0.016
    epochs: int = 100
    c_reg: float = 1.0
    seed: int = 0
    full_batch: bool = False
    optimizer: str = "adam"

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in PATHS:
            raise InputError(f"unknown Deep Fusion variant {self.variant!r}")
        self.channels = tuple(self.channels)
        self.kernels = tuple(self.kernels)
        self.fc_widths = tuple(self.fc_widths)
        self.input_shape = tuple(self.input_shape)
        if len(self.channels) != 2 * len(self.kernels):
            raise InputError("channels must list two convolutions per block "
                             f"({len(self.kernels)} kernels -> {2 * len(self.kernels)} channels)")

    @classmethod
    def paper(cls, variant="v2", **kw):
        """Channel counts, kernels, widths and training settings reported for the model."""
        return cls(variant=variant, profile="paper", channels=(32, 64, 128, 256), kernels=(3, 5),
                   feature_len=256, fc_widths=(256, 256), input_shape=(50, 80, 80), **kw)

    @classmethod
    def desk(cls, variant="v2", **kw):
        return cls(variant=variant, profile="desk", **kw)

    @property
    def path_names(self):
        return PATHS[self.variant]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InputError(f"unknown fusion config keys: {sorted(unknown)}")
        return cls(**d)


def path_specs(config: FusionConfig):
    """Conv blocks (conv k_a -> ReLU -> BN -> conv k_b -> ReLU -> BN -> maxpool), GAP, linear."""
    specs, prev = [], 1
    ch = iter(config.channels)
    for _ in range(len(config.channels) // 2):
        for k in config.kernels:
            c = next(ch)
            specs += [nn.Conv3d(prev, c, k), nn.ReLU(), nn.BatchNorm3d(c)]
            prev = c
        specs.append(nn.MaxPool3d())
    specs += [nn.GlobalAvgPool(), nn.Linear(prev, config.feature_len)]
    return specs


@dataclass
class MultimodalBatch:
    patient_ids: list
    images: dict  # path name -> (N, 1, D, H, W)
    ehr: np.ndarray  # (N, d)
    time: np.ndarray | None = None
    event: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.patient_ids)
        self.ehr = np.asarray(self.ehr, dtype=float).reshape(n, -1)
        for name, arr in self.images.items():
            if arr.ndim != 5 or arr.shape[0] != n or arr.shape[1] != 1:
                raise InputError(f"image path {name}: expected (N={n}, 1, D, H, W), got {arr.shape}")
        for part in ("time", "event"):
            v = getattr(self, part)
            if v is not None and len(v) != n:
                raise InputError(f"{part} has {len(v)} entries for {n} patients")

    def __len__(self):
        return len(self.patient_ids)

    def subset(self, idx):
        idx = np.asarray(idx)
        return MultimodalBatch([self.patient_ids[i] for i in idx],
                               {k: v[idx] for k, v in self.images.items()}, self.ehr[idx],
                               None if self.time is None else self.time[idx],
                               None if self.event is None else self.event[idx])


class DeepFusionModel:
    def __init__(self, config: FusionConfig, ehr_dim: int, grid: TimeGrid):
        self.config = config
        self.ehr_dim = ehr_dim
        rng = np.random.default_rng(config.seed)
        self.paths = {name: nn.Sequential(path_specs(config), rng, (1, *config.input_shape))
                      for name in config.path_names}
        in_dim = config.feature_len * len(self.paths) + ehr_dim
        encoder = nn.Sequential(encoder_specs(in_dim, config.fc_widths, config.dropout), rng)
        self.tail = NeuralMtlrModel(encoder, in_dim, grid, config.c_reg)

    @property
    def grid(self):
        return self.tail.grid

    def image_features(self, batch: MultimodalBatch, train=False, rng=None):
        feats = []
        for name, net in self.paths.items():
            if name not in batch.images:
                raise InputError(f"batch lacks image path {name!r}")
            feats.append(net.forward(batch.images[name], train=train, rng=rng))
        return np.concatenate(feats, axis=1)

    def scores(self, batch, train=False, rng=None):
        feats = self.image_features(batch, train, rng)
        return self.tail.scores(np.concatenate([feats, batch.ehr], axis=1), train, rng)

    def loss_and_grad(self, batch, k_idx, event, train=True, rng=None, reg_scale=1.0):
        feats = self.image_features(batch, train, rng)
        x = np.concatenate([feats, batch.ehr], axis=1)
        value, g_x = self.tail.loss_and_grad(x, k_idx, event, train, rng, reg_scale)
        f = self.config.feature_len
        for i, net in enumerate(self.paths.values()):
            net.backward(g_x[:, i * f:(i + 1) * f], input_grad=False)
        return value

    def parameters(self):
        out = []
        for net in self.paths.values():
            out += net.parameters()
        return out + self.tail.parameters()

    def gradients(self):
        out = []
        for net in self.paths.values():
            out += net.gradients()
        return out + self.tail.gradients()

    def parameter_names(self):
        out = []
        for name, net in self.paths.items():
            out += [f"{name}.{p}" for p in net.parameter_names()]
        return out + [f"tail.{p}" for p in self.tail.encoder.parameter_names()] + \
            ["tail.head.theta", "tail.head.bias"]

    def risk(self, batch):
        """Eval-mode risk (dropout off, batchnorm running statistics)."""
        return risk_from_scores(self.scores(batch, train=False))

    def predict_risk(self, batch) -> list[RiskScore]:
        return [RiskScore(p, v) for p, v in zip(batch.patient_ids, self.risk(batch))]

    def state_dict(self):
        state = {}
        for name, net in self.paths.items():
            state.update(net.state_dict(f"path.{name}."))
        state.update({f"tail.{k}": v for k, v in self.tail.state_dict().items()})
        return state

    def load_state_dict(self, state):
        for name, net in self.paths.items():
            net.load_state_dict(state, f"path.{name}.")
        self.tail.load_state_dict({k[5:]: v for k, v in state.items() if k.startswith("tail.")})

    def save(self, directory, extra=None):
        manifest = {"kind": "deep-fusion", "config": self.config.to_dict(), "ehr_dim": self.ehr_dim,
                    "grid": self.grid.points.tolist(),
                    "layers": {name: net.to_dicts() for name, net in self.paths.items()},
                    "tail": self.tail.manifest()}
        manifest.update(extra or {})
        nn.save_checkpoint(directory, self.state_dict(), manifest)

    @classmethod
    def load(cls, directory):
        arrays, manifest = nn.load_checkpoint(directory)
        model = cls(FusionConfig.from_dict(manifest["config"]), manifest["ehr_dim"],
                    TimeGrid(manifest["grid"]))
        model.load_state_dict(arrays)
        return model, manifest


def layer_kinds(model: DeepFusionModel):
    """Layer-kind sequence per path plus the tail, for structural comparison."""
    kinds = {name: [nn.spec_to_dict(s)["kind"] for s in net.specs] for name, net in model.paths.items()}
    kinds["tail"] = [nn.spec_to_dict(s)["kind"] for s in model.tail.encoder.specs] + ["mtlr"]
    return kinds


def build_model(config: FusionConfig, ehr_dim: int, grid: TimeGrid) -> DeepFusionModel:
    return DeepFusionModel(config, ehr_dim, grid)


def grad_check_model(model: DeepFusionModel, batch: MultimodalBatch, tolerance=1e-3, h=1e-5,
                     max_per_tensor=None, seed=0):
    """Finite-difference check of the end-to-end gradient (train mode, fixed dropout masks)."""
    k_idx = interval_index(model.grid.points, batch.time, batch.event)

    def loss_at():
        return model.loss_and_grad(batch, k_idx, batch.event, True, np.random.default_rng(seed))

    loss_at()
    analytic = dict(zip(model.parameter_names(), [g.copy() for g in model.gradients()]))
    targets = list(zip(model.parameter_names(), model.parameters()))
    return nn.check_gradients(loss_at, targets, analytic, h, tolerance,
                              max_per_tensor=max_per_tensor, seed=seed)


def train(model: DeepFusionModel, cohort: MultimodalBatch, config: FusionConfig | None = None,
          validation: MultimodalBatch | None = None):
    """Minimize the censored MTLR loss end to end with Adam.

    Returns a list of ``(epoch, mean_batch_loss, val_cindex)`` rows; the loss is
    the per-patient objective averaged over the epoch's batches.
    """
    config = config or model.config
    if cohort.event is None or not np.any(cohort.event):
        raise InputError("training cohort needs at least one event")
    k_idx = interval_index(model.grid.points, cohort.time, cohort.event)
    n = len(cohort)
    rng = np.random.default_rng(config.seed + 1)
    step = _make_stepper(config)
    trace = []
    last_good = copy.deepcopy(model.state_dict())
    for epoch in range(config.epochs):
        total = 0.0
        for idx in minibatches(n, config.batch_size, rng, config.full_batch):
            value = model.loss_and_grad(cohort.subset(idx), k_idx[idx], cohort.event[idx],
                                        True, rng, reg_scale=idx.size / n)
            grads = [g / idx.size for g in model.gradients()]
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
                model.load_state_dict(last_good)
                err = ConvergenceError(f"Deep Fusion loss became non-finite at epoch {epoch}; "
                                       "model restored to the last good checkpoint", trace)
                err.checkpoint = last_good
                raise err
            step(model.parameters(), grads)
            total += value / n
        val_c = None
        if validation is not None:
            val_c = harrell_c(model.risk(validation), validation.time, validation.event)[0]
        trace.append((epoch, total, val_c))
        last_good = copy.deepcopy(model.state_dict())
    return trace


def eval_loss(model: DeepFusionModel, batch: MultimodalBatch):
    k_idx = interval_index(model.grid.points, batch.time, batch.event)
    return nll_from_scores(model.scores(batch), k_idx, batch.event)[0]

"""A small float64 layer engine: 3D conv, batchnorm, pooling, dense layers, Adam.

Volumes are ``(N, C, D, H, W)`` arrays, feature batches ``(N, F)``. Every
layer spec exposes ``init``, ``forward`` and ``backward``; ``Sequential``
chains them and keeps the caches needed for backpropagation.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sp_fft

from .errors import InputError

# max elements of one im2col patch matrix (~240 MB of doubles)
_PATCH_BUDGET = 30_000_000
# max complex elements held by the FFT convolution path
_FFT_BUDGET = 20_000_000


class ShapeError(InputError):
    pass


def _expect(cond, what, expected, got):
    if not cond:
        raise ShapeError(f"{what}: expected {expected}, got {got}")


# ---------------------------------------------------------------- convolution

def _patch_chunks(n, d, row_elems):
    """Yield (n_slice, d_slice) blocks whose patch matrix fits the budget."""
    if n * d * row_elems <= _PATCH_BUDGET:
        yield slice(0, n), slice(0, d)
        return
    step = max(1, _PATCH_BUDGET // max(row_elems, 1))
    for i in range(n):
        for d0 in range(0, d, step):
            yield slice(i, i + 1), slice(d0, min(d, d0 + step))


def _windows(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    xt = np.ascontiguousarray(xp.transpose(0, 2, 3, 4, 1))
    # (N, D, H, W, C, k, k, k)
    return sliding_window_view(xt, (k, k, k), axis=(1, 2, 3))


def _use_fft(n, c, o, spatial, k, method):
    if method in ("direct", "fft"):
        return method == "fft"
    if method != "auto":
        raise ValueError(f"unknown convolution method {method!r}")
    if k < 5:
        # below 125 taps im2col + BLAS wins at every size we measured
        return False
    f = np.prod([s + k - 1 for s in spatial[:-1]]) * ((spatial[-1] + k - 1) // 2 + 1)
    return (n * c + o * c + n * o) * f <= _FFT_BUDGET


def _conv3d_direct(x, w):
    n, c, d, h, wd = x.shape
    o, _, k = w.shape[0], w.shape[1], w.shape[2]
    win = _windows(x, k)
    w2 = w.transpose(1, 2, 3, 4, 0).reshape(-1, o)
    out = np.empty((n, d, h, wd, o))
    for ns, ds in _patch_chunks(n, d, h * wd * c * k ** 3):
        patches = win[ns, ds].reshape(-1, c * k ** 3)
        out[ns, ds] = (patches @ w2).reshape(out[ns, ds].shape)
    return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))


def _mix_channels(A, B):
    """Per-frequency ``sum_c A[n, c] * B[o, c]`` -> (n, o, ...), as a batched matmul."""
    n, c = A.shape[:2]
    o = B.shape[0]
    if c <= 8:
        # few channels: broadcasting beats many tiny per-frequency matmuls
        out = A[:, 0, None] * B[None, :, 0]
        for j in range(1, c):
            out += A[:, j, None] * B[None, :, j]
        return out
    spatial = A.shape[2:]
    a = A.reshape(n, c, -1).transpose(2, 0, 1)
    b = B.reshape(o, c, -1).transpose(2, 1, 0)
    return np.ascontiguousarray((a @ b).transpose(1, 2, 0)).reshape(n, o, *spatial)


_AXES = (2, 3, 4)


def _kernel_spectrum(w, size):
    """Spectrum of the kernel laid out circularly, tap ``a`` at offset ``a - k // 2``."""
    k = w.shape[2]
    p = k // 2
    wp = np.zeros(w.shape[:2] + tuple(size))
    wp[:, :, :k, :k, :k] = w
    return sp_fft.rfftn(np.roll(wp, (-p, -p, -p), axis=_AXES), axes=_AXES)


def _fft_forward(x, w):
    # circular length s + k - 1 leaves enough zero padding that no tap wraps
    d, h, wd = x.shape[2:]
    size = tuple(s + w.shape[2] - 1 for s in (d, h, wd))
    X = sp_fft.rfftn(x, size, axes=_AXES)
    W = _kernel_spectrum(w, size)
    y = sp_fft.irfftn(_mix_channels(X, W.conj()), size, axes=_AXES)
    return np.ascontiguousarray(y[:, :, :d, :h, :wd]), {"X": X, "W": W, "size": size}


def _fft_backward(grad_out, spectra, k, need_input=True):
    size = spectra["size"]
    d, h, wd = grad_out.shape[2:]
    G = sp_fft.rfftn(grad_out, size, axes=_AXES)
    grad_in = None
    if need_input:
        full = sp_fft.irfftn(_mix_channels(G, spectra["W"].transpose(1, 0, 2, 3, 4)), size,
                             axes=_AXES)
        grad_in = np.ascontiguousarray(full[:, :, :d, :h, :wd])
    corr = sp_fft.irfftn(_mix_channels(G.conj().transpose(1, 0, 2, 3, 4),
                                       spectra["X"].transpose(1, 0, 2, 3, 4)), size, axes=_AXES)
    taps = [(np.arange(k) - k // 2) % n for n in size]
    grad_w = corr[:, :, taps[0]][:, :, :, taps[1]][:, :, :, :, taps[2]]
    return grad_in, np.ascontiguousarray(grad_w)


def conv3d_same(x, w, b=None, method="auto"):
    """Stride-1 cross-correlation with ``k // 2`` zero padding (odd ``k``).

    ``direct`` sums products explicitly (im2col + BLAS) and is exact for
    Dirac kernels; ``fft`` agrees to rounding (~1e-13 relative). ``auto``
    takes the FFT route for k >= 5 whenever its frequency-domain buffers fit
    in memory, and the direct route otherwise.
    """
    _expect(x.ndim == 5, "conv3d input", "(N, C, D, H, W)", x.shape)
    n, c = x.shape[:2]
    _expect(w.ndim == 5 and w.shape[1] == c and w.shape[2] == w.shape[3] == w.shape[4]
            and w.shape[2] % 2 == 1, "conv3d weight", f"(O, {c}, k, k, k) with odd k", w.shape)
    o, k = w.shape[0], w.shape[2]
    if _use_fft(n, c, o, x.shape[2:], k, method):
        out = _fft_forward(x, w)[0]
    else:
        out = _conv3d_direct(x, w)
    if b is not None:
        out += b.reshape(1, -1, 1, 1, 1)
    return out


def conv3d_weight_grad(x, grad_out, k, method="auto"):
    n, c, d, h, wd = x.shape
    o = grad_out.shape[1]
    if _use_fft(n, c, o, x.shape[2:], k, method):
        dummy = np.zeros((o, c, k, k, k))
        return _fft_backward(grad_out, _fft_forward(x, dummy)[1], k, need_input=False)[1]
    win = _windows(x, k)
    g = grad_out.transpose(0, 2, 3, 4, 1)
    gw = np.zeros((c * k ** 3, o))
    for ns, ds in _patch_chunks(n, d, h * wd * c * k ** 3):
        patches = win[ns, ds].reshape(-1, c * k ** 3)
        gw += patches.T @ g[ns, ds].reshape(-1, o)
    return np.ascontiguousarray(gw.reshape(c, k, k, k, o).transpose(4, 0, 1, 2, 3))


def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------- layer specs

@dataclass(frozen=True)
class Conv3d:
    in_ch: int
    out_ch: int
    kernel: int = 3

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError(f"same padding needs an odd kernel, got {self.kernel}")

    def init(self, rng):
        fan_in = self.in_ch * self.kernel ** 3
        k = self.kernel
        return {"weight": _kaiming_uniform(rng, (self.out_ch, self.in_ch, k, k, k), fan_in),
                "bias": np.zeros(self.out_ch)}

    def forward(self, params, x, train, rng):
        _expect(x.ndim == 5 and x.shape[1] == self.in_ch, "conv3d input",
                f"(N, {self.in_ch}, D, H, W)", x.shape)
        w, b = params["weight"], params["bias"]
        if _use_fft(x.shape[0], self.in_ch, self.out_ch, x.shape[2:], self.kernel, "auto"):
            y, spectra = _fft_forward(x, w)
            y += b.reshape(1, -1, 1, 1, 1)
            return y, {"x": x, "fft": spectra}
        return conv3d_same(x, w, b, method="direct"), {"x": x}

    def backward(self, params, cache, grad_out):
        need_input = cache.get("need_input", True)
        grads = {"bias": grad_out.sum(axis=(0, 2, 3, 4))}
        if "fft" in cache:
            grad_in, grads["weight"] = _fft_backward(grad_out, cache["fft"], self.kernel,
                                                     need_input)
            return grad_in, grads
        grads["weight"] = conv3d_weight_grad(cache["x"], grad_out, self.kernel, method="direct")
        if not need_input:
            return None, grads
        w = params["weight"]
        w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
        return conv3d_same(grad_out, w_t, method="direct"), grads

    def out_shape(self, shape):
        _expect(len(shape) == 4 and shape[0] == self.in_ch, "conv3d input",
                f"({self.in_ch}, D, H, W)", shape)
        return (self.out_ch, *shape[1:])


@dataclass(frozen=True)
class BatchNorm3d:
    """Per-channel batch normalization over every axis except 1."""

    channels: int
    eps: float = 1e-5
    momentum: float = 0.1

    buffers = ("running_mean", "running_var")

    def init(self, rng):
        return {"gamma": np.ones(self.channels), "beta": np.zeros(self.channels),
                "running_mean": np.zeros(self.channels), "running_var": np.ones(self.channels)}

    def _bshape(self, x):
        return (1, self.channels) + (1,) * (x.ndim - 2)

    def forward(self, params, x, train, rng):
        _expect(x.ndim >= 2 and x.shape[1] == self.channels, "batchnorm input",
                f"(N, {self.channels}, ...)", x.shape)
        axes = (0,) + tuple(range(2, x.ndim))
        bs = self._bshape(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // self.channels
            unbiased = var * count / max(count - 1, 1)
            params["running_mean"] *= 1 - self.momentum
            params["running_mean"] += self.momentum * mean
            params["running_var"] *= 1 - self.momentum
            params["running_var"] += self.momentum * unbiased
        else:
            mean, var = params["running_mean"], params["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bs)) * inv_std.reshape(bs)
        y = xhat * params["gamma"].reshape(bs) + params["beta"].reshape(bs)
        return y, {"xhat": xhat, "inv_std": inv_std, "train": train}

    def backward(self, params, cache, grad_out):
        xhat, inv_std = cache["xhat"], cache["inv_std"]
        axes = (0,) + tuple(range(2, xhat.ndim))
        bs = self._bshape(xhat)
        grads = {"gamma": (grad_out * xhat).sum(axis=axes), "beta": grad_out.sum(axis=axes)}
        dxhat = grad_out * params["gamma"].reshape(bs)
        if not cache["train"]:
            return dxhat * inv_std.reshape(bs), grads
        m = xhat.size // self.channels
        s1 = dxhat.sum(axis=axes).reshape(bs)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(bs)
        grad_in = inv_std.reshape(bs) / m * (m * dxhat - s1 - xhat * s2)
        return grad_in, grads

    def out_shape(self, shape):
        _expect(shape[0] == self.channels, "batchnorm input", f"({self.channels}, ...)", shape)
        return shape


@dataclass(frozen=True)
class ReLU:
    def init(self, rng):
        return {}

    def forward(self, params, x, train, rng):
        mask = x > 0
        return x * mask, {"mask": mask}

    def backward(self, params, cache, grad_out):
        return grad_out * cache["mask"], {}

    def out_shape(self, shape):
        return shape


@dataclass(frozen=True)
class MaxPool3d:
    """Window 2, stride 2; odd trailing voxels are dropped."""

    def init(self, rng):
        return {}

    def forward(self, params, x, train, rng):
        _expect(x.ndim == 5, "maxpool3d input", "(N, C, D, H, W)", x.shape)
        n, c, d, h, w = x.shape
        d2, h2, w2 = d // 2, h // 2, w // 2
        _expect(min(d2, h2, w2) > 0, "maxpool3d spatial dims", ">= 2", x.shape[2:])
        xc = x[:, :, :2 * d2, :2 * h2, :2 * w2]
        blocks = xc.reshape(n, c, d2, 2, h2, 2, w2, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7)
        blocks = blocks.reshape(n, c, d2, h2, w2, 8)
        arg = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return y, {"arg": arg, "shape": x.shape}

    def backward(self, params, cache, grad_out):
        n, c, d, h, w = cache["shape"]
        d2, h2, w2 = grad_out.shape[2:]
        blocks = np.zeros((n, c, d2, h2, w2, 8))
        np.put_along_axis(blocks, cache["arg"][..., None], grad_out[..., None], axis=-1)
        blocks = blocks.reshape(n, c, d2, h2, w2, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        grad_in = np.zeros((n, c, d, h, w))
        grad_in[:, :, :2 * d2, :2 * h2, :2 * w2] = blocks.reshape(n, c, 2 * d2, 2 * h2, 2 * w2)
        return grad_in, {}

    def out_shape(self, shape):
        c, *sp = shape
        return (c, *(s // 2 for s in sp))


@dataclass(frozen=True)
class GlobalAvgPool:
    def init(self, rng):
        return {}

    def forward(self, params, x, train, rng):
        _expect(x.ndim >= 3, "global_avg_pool input", "(N, C, ...)", x.shape)
        axes = tuple(range(2, x.ndim))
        return x.mean(axis=axes), {"shape": x.shape}

    def backward(self, params, cache, grad_out):
        shape = cache["shape"]
        count = int(np.prod(shape[2:]))
        g = grad_out.reshape(grad_out.shape + (1,) * (len(shape) - 2)) / count
        return np.broadcast_to(g, shape).copy(), {}

    def out_shape(self, shape):
        return (shape[0],)


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int

    def init(self, rng):
        return {"weight": _kaiming_uniform(rng, (self.out_features, self.in_features),
                                           self.in_features),
                "bias": np.zeros(self.out_features)}

    def forward(self, params, x, train, rng):
        _expect(x.ndim == 2 and x.shape[1] == self.in_features, "linear input",
                f"(N, {self.in_features})", x.shape)
        return x @ params["weight"].T + params["bias"], {"x": x}

    def backward(self, params, cache, grad_out):
        grads = {"weight": grad_out.T @ cache["x"], "bias": grad_out.sum(axis=0)}
        return grad_out @ params["weight"], grads

    def out_shape(self, shape):
        _expect(tuple(shape) == (self.in_features,), "linear input",
                f"({self.in_features},)", shape)
        return (self.out_features,)


@dataclass(frozen=True)
class Dropout:
    p: float = 0.5

    def init(self, rng):
        return {}

    def forward(self, params, x, train, rng):
        if not train or self.p == 0:
            return x, {"mask": None}
        if rng is None:
            raise ValueError("dropout in train mode needs an explicit rng")
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * mask, {"mask": mask}

    def backward(self, params, cache, grad_out):
        if cache["mask"] is None:
            return grad_out, {}
        return grad_out * cache["mask"], {}

    def out_shape(self, shape):
        return shape


LAYER_KINDS = {
    "conv3d": Conv3d, "batchnorm3d": BatchNorm3d, "relu": ReLU, "maxpool3d": MaxPool3d,
    "global_avg_pool": GlobalAvgPool, "linear": Linear, "dropout": Dropout,
}
_KIND_OF = {cls: name for name, cls in LAYER_KINDS.items()}


def spec_to_dict(spec):
    return {"kind": _KIND_OF[type(spec)], **asdict(spec)}


def spec_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    try:
        return LAYER_KINDS[kind](**d)
    except KeyError:
        raise InputError(f"unknown layer kind {kind!r}") from None


def layer_forward(spec, params, x, train=False, rng=None):
    y, cache = spec.forward(params, x, train, rng)
    cache["spec"] = spec
    cache["out_shape"] = y.shape
    return y, cache


def layer_backward(spec, params, cache, grad_out):
    if cache.get("spec") != spec:
        raise InputError(f"cache was produced by {cache.get('spec')!r}, not {spec!r}")
    if grad_out.shape != cache["out_shape"]:
        raise ShapeError(f"grad_out: expected {cache['out_shape']}, got {grad_out.shape}")
    return spec.backward(params, cache, grad_out)


# ---------------------------------------------------------------- containers

class Sequential:
    """Layer chain with explicit, seeded initialization."""

    def __init__(self, specs, rng=None, input_shape=None):
        self.specs = list(specs)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = [s.init(rng) for s in self.specs]
        self.grads = [{k: np.zeros_like(v) for k, v in self._trainable(i).items()}
                      for i in range(len(self.specs))]
        self._caches = None
        if input_shape is not None:
            self.output_shape(input_shape)

    def _trainable(self, i):
        buffers = getattr(self.specs[i], "buffers", ())
        return {k: v for k, v in self.params[i].items() if k not in buffers}

    def output_shape(self, input_shape):
        """Per-sample shape algebra; raises ShapeError on an inconsistent chain."""
        shape = tuple(input_shape)
        for spec in self.specs:
            shape = tuple(spec.out_shape(shape))
        return shape

    def forward(self, x, train=False, rng=None):
        caches = []
        for spec, params in zip(self.specs, self.params):
            x, cache = layer_forward(spec, params, x, train, rng)
            caches.append(cache)
        self._caches = caches
        return x

    def backward(self, grad_out, input_grad=True):
        """Backpropagate ``grad_out``; with ``input_grad=False`` the first layer may
        skip its input gradient and ``None`` is returned."""
        if self._caches is None:
            raise InputError("backward called before forward")
        if not input_grad and self._caches:
            self._caches[0]["need_input"] = False
        for i in reversed(range(len(self.specs))):
            grad_out, g = layer_backward(self.specs[i], self.params[i], self._caches[i], grad_out)
            for k, v in g.items():
                self.grads[i][k] = v
        self._caches = None
        return grad_out

    def parameters(self):
        """Trainable arrays in a fixed order (matches :meth:`gradients`)."""
        return [self.params[i][k] for i in range(len(self.specs)) for k in sorted(self._trainable(i))]

    def gradients(self):
        return [self.grads[i][k] for i in range(len(self.specs)) for k in sorted(self._trainable(i))]

    def parameter_names(self):
        return [f"{i}.{k}" for i in range(len(self.specs)) for k in sorted(self._trainable(i))]

    def state_dict(self, prefix=""):
        return {f"{prefix}{i}.{k}": v for i, p in enumerate(self.params) for k, v in sorted(p.items())}

    def load_state_dict(self, state, prefix=""):
        for i, p in enumerate(self.params):
            for k in p:
                arr = np.asarray(state[f"{prefix}{i}.{k}"], dtype=float)
                _expect(arr.shape == p[k].shape, f"parameter {prefix}{i}.{k}", p[k].shape, arr.shape)
                p[k][...] = arr

    def to_dicts(self):
        return [spec_to_dict(s) for s in self.specs]


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params, grads):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeError(f"adam: {len(params)} params but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to adam_step")
    state.step += 1
    c1 = 1 - state.beta1 ** state.step
    c2 = 1 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        _expect(p.shape == g.shape == m.shape, "adam gradient", p.shape, g.shape)
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple  # (parameter name, flat index)
    tolerance: float
    errors: dict  # parameter name -> max rel error

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def rel_error(a, b, floor=1e-6):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(loss_at, targets, analytic, h=1e-5, tolerance=1e-4, floor=1e-6,
                    max_per_tensor=None, seed=0):
    """Central-difference check of ``analytic`` gradients.

    ``targets`` is a list of ``(name, array)``; arrays are perturbed in place
    and ``loss_at()`` must recompute the loss from their current values.
    ``max_per_tensor`` samples that many entries per array (seeded).
    """
    rng = np.random.default_rng(seed)
    errors, worst, worst_err = {}, (None, None), 0.0
    for name, arr in targets:
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"{name}: gradient-check target must be contiguous")
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = np.sort(rng.choice(flat.size, max_per_tensor, replace=False))
        numeric = np.zeros(idx.size)
        for n, j in enumerate(idx):
            old = flat[j]
            flat[j] = old + h
            up = loss_at()
            flat[j] = old - h
            down = loss_at()
            flat[j] = old
            numeric[n] = (up - down) / (2 * h)
        err = rel_error(np.asarray(analytic[name]).reshape(-1)[idx], numeric, floor)
        errors[name] = float(err.max()) if err.size else 0.0
        if err.size and err.max() > worst_err:
            worst_err = float(err.max())
            worst = (name, int(idx[err.argmax()]))
    return GradCheckReport(worst_err, worst, tolerance, errors)


def grad_check(model: Sequential, x, loss_fn: Callable, tolerance=1e-4, h=1e-5,
               train=True, seed=0, check_input=True, floor=1e-6, max_per_tensor=None):
    """Compare backprop gradients of a Sequential with central differences.

    ``loss_fn(output) -> (loss, grad_output)``. Dropout masks are redrawn from
    ``seed`` at every evaluation so perturbed losses see the same masks.
    """
    x = np.array(x, dtype=float)

    def loss_at():
        out = model.forward(x, train=train, rng=np.random.default_rng(seed))
        return loss_fn(out)[0]

    out = model.forward(x, train=train, rng=np.random.default_rng(seed))
    _, g_out = loss_fn(out)
    g_in = model.backward(g_out)
    analytic = dict(zip(model.parameter_names(), [g.copy() for g in model.gradients()]))
    targets = list(zip(model.parameter_names(), model.parameters()))
    if check_input:
        analytic["input"] = g_in
        targets.append(("input", x))
    return check_gradients(loss_at, targets, analytic, h, tolerance, floor, max_per_tensor, seed)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(directory, arrays: dict, manifest: dict | None = None):
    """Write ``params.bin`` (little-endian float64 blobs) and ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(directory / "params.bin", "wb") as fh:
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    body = dict(manifest or {})
    body["tensors"] = entries
    (directory / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True))


def load_checkpoint(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    blob = (directory / "params.bin").read_bytes()
    arrays = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        end = e["offset"] + 8 * count
        if end > len(blob):
            raise InputError(f"checkpoint blob truncated at tensor {e['name']}")
        arrays[e["name"]] = np.frombuffer(blob, dtype="<f8", count=count,
                                          offset=e["offset"]).reshape(e["shape"]).astype(float)
    return arrays, manifest

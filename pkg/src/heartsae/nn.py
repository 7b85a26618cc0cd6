"""Dense numeric core: layers, activations, losses and Adam on float64 numpy arrays.

Every layer exposes a ``forward(x) -> (y, cache)`` and a
``backward(cache, grad_y) -> (param_grads, grad_x)`` pair.  Arrays are plain
``np.ndarray``; batches are the leading axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

DTYPE = np.float64
BCE_CLIP = 1e-7

CHECKPOINT_FORMAT = "heartsae-checkpoint"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NumericalError(FloatingPointError):
    """A loss or tensor became NaN/Inf."""


def check_finite(x, where: str = "tensor"):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {where}")
    return x


# -- activations -------------------------------------------------------------

def sigmoid(z):
    return expit(z)


def _activate(name, z):
    if name == "sigmoid":
        return sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, z, y, g):
    if name == "sigmoid":
        return g * y * (1.0 - y)
    if name == "relu":
        return g * (z > 0)
    return g


ACTIVATIONS = ("sigmoid", "relu", "linear")


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


# -- dense -------------------------------------------------------------------

@dataclass
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"bias {self.bias.shape} does not match weights {self.weights.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, activation: str = "linear") -> "Dense":
        w = glorot_uniform(rng, (n_out, n_in), n_in, n_out)
        return cls(w, np.zeros(n_out, dtype=DTYPE), activation)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}

    def forward(self, x):
        x = np.asarray(x, dtype=DTYPE)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.weights.shape[1]:
            raise ShapeError(f"dense layer expects {self.weights.shape[1]} inputs, got shape {x.shape}")
        z = x @ self.weights.T + self.bias
        y = _activate(self.activation, z)
        cache = (x, z, y, squeeze)
        return (y[0] if squeeze else y), cache

    def backward(self, cache, grad_y):
        x, z, y, squeeze = cache
        g = np.asarray(grad_y, dtype=DTYPE)
        if squeeze:
            g = g[None, :]
        if g.shape != y.shape:
            raise ShapeError(f"upstream gradient {g.shape} does not match output {y.shape}")
        gz = _activation_grad(self.activation, z, y, g)
        grads = {"weights": gz.T @ x, "bias": gz.sum(axis=0)}
        gx = gz @ self.weights
        return grads, (gx[0] if squeeze else gx)


def dense_forward(layer: Dense, x):
    return layer.forward(x)


def dense_backward(layer: Dense, cache, grad_y):
    grads, gx = layer.backward(cache, grad_y)
    return grads["weights"], grads["bias"], gx


# -- convolution -------------------------------------------------------------

@dataclass
class Conv2D:
    """Valid cross-correlation, NCHW layout."""

    kernels: np.ndarray  # (filters, in_channels, kh, kw)
    bias: np.ndarray     # (filters,)
    stride: tuple[int, int] = (1, 1)

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE)
        if isinstance(self.stride, int):
            self.stride = (self.stride, self.stride)
        self.stride = tuple(int(s) for s in self.stride)
        if self.kernels.ndim != 4 or self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(f"bias {self.bias.shape} does not match kernels {self.kernels.shape}")
        if min(self.stride) < 1:
            raise ValueError("stride must be positive")

    @classmethod
    def init(cls, rng, in_channels: int, filters: int, kernel: tuple[int, int], stride=(1, 1)) -> "Conv2D":
        kh, kw = kernel
        k = glorot_uniform(rng, (filters, in_channels, kh, kw), in_channels * kh * kw, filters * kh * kw)
        return cls(k, np.zeros(filters, dtype=DTYPE), stride)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"kernels": self.kernels, "bias": self.bias}

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        _, _, kh, kw = self.kernels.shape
        sh, sw = self.stride
        if kh > h or kw > w:
            raise ShapeError(f"kernel {kh}x{kw} larger than input {h}x{w}")
        return (h - kh) // sh + 1, (w - kw) // sw + 1

    def forward(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 4:
            raise ShapeError(f"conv input must be (batch, channels, h, w), got {x.shape}")
        f, c, kh, kw = self.kernels.shape
        if x.shape[1] != c:
            raise ShapeError(f"conv expects {c} channels, got {x.shape[1]}")
        ho, wo = self.output_shape(*x.shape[2:])
        sh, sw = self.stride
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
        # (B, C, Ho, Wo, kh, kw) -> (B, Ho, Wo, C*kh*kw)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(x.shape[0], ho, wo, c * kh * kw)
        y = cols @ self.kernels.reshape(f, -1).T + self.bias
        return y.transpose(0, 3, 1, 2), (x.shape, cols)

    def backward(self, cache, grad_y):
        x_shape, cols = cache
        f, c, kh, kw = self.kernels.shape
        b, _, ho, wo = grad_y.shape
        if cols.shape[:3] != (b, ho, wo) or grad_y.shape[1] != f:
            raise ShapeError("upstream gradient does not match cached conv output")
        g = np.ascontiguousarray(grad_y.transpose(0, 2, 3, 1)).reshape(-1, f)  # (B*Ho*Wo, F)
        grad_k = (g.T @ cols.reshape(-1, c * kh * kw)).reshape(f, c, kh, kw)
        grad_b = g.sum(axis=0)
        gcols = (g @ self.kernels.reshape(f, -1)).reshape(b, ho, wo, c, kh, kw)
        gx = np.zeros(x_shape, dtype=DTYPE)
        sh, sw = self.stride
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return {"kernels": grad_k, "bias": grad_b}, gx


def conv2d_forward(layer: Conv2D, x):
    return layer.forward(x)


def conv2d_backward(layer: Conv2D, cache, grad_y):
    grads, gx = layer.backward(cache, grad_y)
    return grads["kernels"], grads["bias"], gx


# -- max pooling -------------------------------------------------------------

def maxpool2d(x, window: tuple[int, int]):
    """Non-overlapping max pooling. Ties go to the first max in row-major order."""
    x = np.asarray(x, dtype=DTYPE)
    ph, pw = window
    b, c, h, w = x.shape
    if h % ph or w % pw:
        raise ShapeError(f"pool window {ph}x{pw} does not divide input {h}x{w}")
    ho, wo = h // ph, w // pw
    blocks = x.reshape(b, c, ho, ph, wo, pw).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, ph * pw)
    arg = blocks.argmax(axis=-1)  # argmax returns the first maximum
    return blocks.max(axis=-1), (x.shape, window, arg)


def maxpool2d_backward(cache, grad_y):
    x_shape, (ph, pw), arg = cache
    b, c, h, w = x_shape
    ho, wo = h // ph, w // pw
    if grad_y.shape != (b, c, ho, wo):
        raise ShapeError("upstream gradient does not match pooled output")
    routed = (arg[..., None] == np.arange(ph * pw)) * grad_y[..., None]
    return routed.reshape(b, c, ho, wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


# -- losses ------------------------------------------------------------------

def bce_loss(p, y):
    """Mean binary cross-entropy and its gradient with respect to ``p``."""
    p = np.asarray(p, dtype=DTYPE)
    y = np.asarray(y, dtype=DTYPE)
    if p.shape != y.shape:
        raise ShapeError(f"bce: prediction shape {p.shape} != label shape {y.shape}")
    n = p.size
    pc = np.clip(p, BCE_CLIP, 1.0 - BCE_CLIP)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    grad = (pc - y) / (pc * (1.0 - pc)) / n
    return float(loss), grad


def mse_loss(xhat, x):
    """Per-sample sum of squared errors, averaged over the batch axis.

    A 1-D input is treated as a single sample.
    """
    xhat = np.asarray(xhat, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    if xhat.shape != x.shape:
        raise ShapeError(f"mse: shape {xhat.shape} != {x.shape}")
    batch = x.shape[0] if x.ndim > 1 else 1
    diff = xhat - x
    return float(np.sum(diff * diff) / batch), 2.0 * diff / batch


def l1_penalty(activations, lam: float):
    """``lam * sum|a|`` and its subgradient (sign(0) = 0)."""
    if lam < 0:
        raise ValueError("L1 weight must be non-negative")
    a = np.asarray(activations, dtype=DTYPE)
    return float(lam * np.abs(a).sum()), lam * np.sign(a)


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update; ``params`` arrays are modified in place."""
    if not np.isfinite(state.t):
        raise ValueError("Adam step counter is not finite")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


# -- checkpoints -------------------------------------------------------------
#
# JSON document:
#   {"format": "heartsae-checkpoint", "version": 1, "header": {...},
#    "tensors": [{"name": str, "shape": [int, ...], "values": [float, ...]}, ...]}
# values are row-major; floats are written with repr() so they round-trip exactly.

def save_checkpoint(path, tensors: Mapping[str, np.ndarray], header: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "header": header or {},
        "tensors": [
            {"name": name, "shape": list(arr.shape), "values": np.asarray(arr, dtype=DTYPE).ravel().tolist()}
            for name, arr in tensors.items()
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    tensors = {}
    for entry in doc["tensors"]:
        arr = np.asarray(entry["values"], dtype=DTYPE)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"tensor {entry['name']}: {arr.size} values for shape {shape}")
        tensors[entry["name"]] = arr.reshape(shape)
    return tensors, doc["header"]

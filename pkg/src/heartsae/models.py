"""Vanilla MLP and the multitask sparse-autoencoder networks (SAE+MLP, SAE+CNN).

The multitask network shares one encoder between a decoder (reconstruction,
MSE) and a classifier (BCE).  Both heads are trained together with an L1
penalty on the latent activations:

    total = alpha * bce + (1 - alpha) * mse + l1_lambda * mean_batch(sum |latent|)
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .data import N_FEATURES, FeatureMatrix, MinMaxScaler

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SAEConfig:
    latent_dim: int = 100
    l1_lambda: float = 1e-4
    input_dim: int = N_FEATURES
    encoder_activation: str = "sigmoid"
    decoder_activation: str = "sigmoid"

    def __post_init__(self):
        if self.latent_dim <= self.input_dim:
            raise ConfigError(f"latent_dim ({self.latent_dim}) must exceed input_dim ({self.input_dim})")
        if self.l1_lambda < 0:
            raise ConfigError("l1_lambda must be >= 0")
        for act in (self.encoder_activation, self.decoder_activation):
            if act not in nn.ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")


@dataclass(frozen=True)
class ClassifierConfig:
    kind: str = "mlp"
    mlp_hidden: tuple[int, ...] = (64, 32)
    cnn_grid: tuple[int, int] | None = None
    cnn_filters: int = 16
    cnn_kernel: tuple[int, int] = (3, 3)
    pool: tuple[int, int] = (2, 2)
    head_hidden: tuple[int, ...] = (64,)

    def __post_init__(self):
        if self.kind not in ("mlp", "cnn"):
            raise ConfigError(f"classifier kind must be 'mlp' or 'cnn', got {self.kind!r}")
        # JSON round trips hand back lists
        for name in ("mlp_hidden", "head_hidden", "cnn_kernel", "pool"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.cnn_grid is not None:
            object.__setattr__(self, "cnn_grid", tuple(int(v) for v in self.cnn_grid))


@dataclass(frozen=True)
class MultitaskConfig:
    sae: SAEConfig | None = field(default_factory=SAEConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    loss_mix_alpha: float = 0.5
    epochs: int = 150
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_mix_alpha <= 1.0:
            raise ConfigError("loss_mix_alpha must lie in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.sae is None and self.loss_mix_alpha != 1.0:
            raise ConfigError("a network without an autoencoder must use loss_mix_alpha = 1")

    @property
    def input_dim(self) -> int:
        return self.sae.input_dim if self.sae else N_FEATURES

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MultitaskConfig":
        d = dict(d)
        sae = d.pop("sae", None)
        clf = d.pop("classifier", {})
        return cls(sae=SAEConfig(**sae) if sae else None, classifier=ClassifierConfig(**clf), **d)


def vanilla_mlp_config(hidden: Sequence[int] = (64, 32), **kw) -> MultitaskConfig:
    return MultitaskConfig(sae=None, classifier=ClassifierConfig(kind="mlp", mlp_hidden=tuple(hidden)),
                           loss_mix_alpha=1.0, **kw)


_KERNEL_CANDIDATES = ((3, 3), (3, 4), (4, 3), (2, 2), (2, 3), (3, 2), (4, 4))


def choose_cnn_layout(latent_dim: int, pool: tuple[int, int] = (2, 2)) -> tuple[tuple[int, int], tuple[int, int]]:
    """Pick (grid, kernel) for reshaping a latent vector into a 2-D map.

    Grids are factor pairs rows <= cols ordered by cols - rows; for each grid
    the first kernel whose valid-convolution output is divisible by ``pool``
    wins.  200 gives a 10x20 grid with a 3x3 kernel.
    """
    pairs = sorted(((r, latent_dim // r) for r in range(1, int(np.sqrt(latent_dim)) + 1) if latent_dim % r == 0),
                   key=lambda rc: rc[1] - rc[0])
    for rows, cols in pairs:
        for kh, kw in _KERNEL_CANDIDATES:
            ho, wo = rows - kh + 1, cols - kw + 1
            if ho >= pool[0] and wo >= pool[1] and ho % pool[0] == 0 and wo % pool[1] == 0:
                return (rows, cols), (kh, kw)
    raise ConfigError(f"no grid/kernel layout fits latent_dim {latent_dim} with pool {pool}")


def cnn_classifier_config(latent_dim: int, filters: int = 16, pool=(2, 2), head_hidden=(64,)) -> ClassifierConfig:
    grid, kernel = choose_cnn_layout(latent_dim, pool)
    return ClassifierConfig(kind="cnn", cnn_grid=grid, cnn_filters=filters, cnn_kernel=kernel,
                            pool=tuple(pool), head_hidden=tuple(head_hidden))


def multitask_config(kind: str, latent_dim: int, l1_lambda: float = 1e-4, **kw) -> MultitaskConfig:
    if kind == "cnn":
        clf = cnn_classifier_config(latent_dim, kw.pop("cnn_filters", 16), head_hidden=kw.pop("head_hidden", (64,)))
    else:
        clf = ClassifierConfig(kind="mlp", mlp_hidden=tuple(kw.pop("mlp_hidden", (64, 32))))
    return MultitaskConfig(sae=SAEConfig(latent_dim=latent_dim, l1_lambda=l1_lambda), classifier=clf, **kw)


class MultitaskNet:
    """Encoder/decoder/classifier network with a hand-written backward pass.

    With ``config.sae is None`` the classifier reads the 24 inputs directly
    (the vanilla MLP).
    """

    def __init__(self, config: MultitaskConfig):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
        self.layers: dict[str, nn.Dense | nn.Conv2D] = {}
        sae, clf = config.sae, config.classifier
        feat_dim = config.input_dim
        if sae is not None:
            self.layers["encoder"] = nn.Dense.init(rng, sae.input_dim, sae.latent_dim, sae.encoder_activation)
            self.layers["decoder"] = nn.Dense.init(rng, sae.latent_dim, sae.input_dim, sae.decoder_activation)
            feat_dim = sae.latent_dim

        if clf.kind == "mlp":
            widths = [feat_dim, *clf.mlp_hidden]
            self.hidden = [f"hidden{i}" for i in range(len(clf.mlp_hidden))]
        else:
            if clf.cnn_grid is None:
                raise ConfigError("cnn classifier requires cnn_grid")
            rows, cols = clf.cnn_grid
            if rows * cols != feat_dim:
                raise ConfigError(f"cnn_grid {rows}x{cols} does not match latent size {feat_dim}")
            self.layers["conv"] = nn.Conv2D.init(rng, 1, clf.cnn_filters, clf.cnn_kernel)
            ho, wo = self.layers["conv"].output_shape(rows, cols)
            ph, pw = clf.pool
            if ho % ph or wo % pw:
                raise ConfigError(f"conv output {ho}x{wo} is not divisible by pool {ph}x{pw}")
            if ho // ph < 1 or wo // pw < 1:
                raise ConfigError("pooled feature map is empty")
            widths = [clf.cnn_filters * (ho // ph) * (wo // pw), *clf.head_hidden]
            self.hidden = [f"head{i}" for i in range(len(clf.head_hidden))]
        for name, n_in, n_out in zip(self.hidden, widths[:-1], widths[1:]):
            self.layers[name] = nn.Dense.init(rng, n_in, n_out, "relu")
        # logit layer; the sigmoid is applied outside so BCE can use the fused gradient
        self.layers["output"] = nn.Dense.init(rng, widths[-1], 1, "linear")
        self._pack()

    def _pack(self):
        # one contiguous buffer; layer arrays become views so Adam updates everything in one pass
        arrays = [(layer, pn, arr) for layer in self.layers.values() for pn, arr in layer.params.items()]
        self.flat = np.concatenate([arr.ravel() for _, _, arr in arrays])
        offset = 0
        for layer, pn, arr in arrays:
            view = self.flat[offset:offset + arr.size].reshape(arr.shape)
            setattr(layer, pn, view)
            offset += arr.size

    def flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[name].ravel() for name in self.parameters()])

    # parameters are exposed as "layer.param" views onto the layer arrays
    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": arr for ln, layer in self.layers.items() for pn, arr in layer.params.items()}

    def load_parameters(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(tensors):
            raise ValueError("checkpoint parameters do not match the model architecture")
        for name, arr in tensors.items():
            if params[name].shape != arr.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {params[name].shape}")
            params[name][...] = arr

    def encode(self, x):
        if self.config.sae is None:
            return np.asarray(x, dtype=nn.DTYPE)
        return self.layers["encoder"].forward(x)[0]

    def reshape_latent(self, latent):
        rows, cols = self.config.classifier.cnn_grid
        return latent.reshape(latent.shape[0], 1, rows, cols)

    def forward(self, x):
        x = np.asarray(x, dtype=nn.DTYPE)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise nn.ShapeError(f"expected (batch, {self.config.input_dim}) input, got {x.shape}")
        caches = {}
        recon = None
        if self.config.sae is not None:
            latent, caches["encoder"] = self.layers["encoder"].forward(x)
            recon, caches["decoder"] = self.layers["decoder"].forward(latent)
        else:
            latent = x
        h = latent
        if self.config.classifier.kind == "cnn":
            h, caches["conv"] = self.layers["conv"].forward(self.reshape_latent(h))
            caches["relu"] = h > 0
            h = h * caches["relu"]
            h, caches["pool"] = nn.maxpool2d(h, self.config.classifier.pool)
            caches["flat_shape"] = h.shape
            h = h.reshape(h.shape[0], -1)
        for name in self.hidden:
            h, caches[name] = self.layers[name].forward(h)
        logit, caches["output"] = self.layers["output"].forward(h)
        prob = nn.sigmoid(logit[:, 0])
        return recon, prob, latent, caches

    def backward(self, x, y, recon, prob, latent, caches, alpha: float):
        """Gradients of the total loss for one batch."""
        b = x.shape[0]
        grads: dict[str, np.ndarray] = {}

        def collect(name, g):
            for pn, arr in g.items():
                grads[f"{name}.{pn}"] = arr

        # sigmoid + BCE fused: d/dlogit = (p - y) / batch
        g = (alpha * (prob - y) / b)[:, None]
        g_out, g = self.layers["output"].backward(caches["output"], g)
        collect("output", g_out)
        for name in reversed(self.hidden):
            gp, g = self.layers[name].backward(caches[name], g)
            collect(name, gp)
        if self.config.classifier.kind == "cnn":
            g = nn.maxpool2d_backward(caches["pool"], g.reshape(caches["flat_shape"]))
            g = g * caches["relu"]
            gp, g = self.layers["conv"].backward(caches["conv"], g)
            collect("conv", gp)
            g = g.reshape(b, -1)
        if self.config.sae is None:
            return grads
        _, g_mse = nn.mse_loss(recon, x)
        gp, g_dec = self.layers["decoder"].backward(caches["decoder"], (1.0 - alpha) * g_mse)
        collect("decoder", gp)
        _, g_l1 = nn.l1_penalty(latent, self.config.sae.l1_lambda)
        gp, _ = self.layers["encoder"].backward(caches["encoder"], g + g_dec + g_l1 / b)
        collect("encoder", gp)
        return grads

    def losses(self, x, y, recon, prob, latent) -> dict[str, float]:
        alpha = self.config.loss_mix_alpha
        bce, _ = nn.bce_loss(prob, y)
        if self.config.sae is None:
            return {"total": bce, "bce": bce, "mse": 0.0, "l1": 0.0}
        mse, _ = nn.mse_loss(recon, x)
        l1, _ = nn.l1_penalty(latent, self.config.sae.l1_lambda)
        l1 /= x.shape[0]
        return {"total": alpha * bce + (1.0 - alpha) * mse + l1, "bce": bce, "mse": mse, "l1": l1}


def build_model(config: MultitaskConfig) -> MultitaskNet:
    return MultitaskNet(config)


def forward_multitask(model: MultitaskNet, batch):
    """Return (reconstruction, probabilities, latent) for a batch of 24-column rows."""
    values = batch.values if isinstance(batch, FeatureMatrix) else batch
    recon, prob, latent, _ = model.forward(values)
    return recon, prob, latent


HISTORY_KEYS = ("total", "bce", "mse", "l1", "accuracy")


@dataclass
class TrainedModel:
    config: MultitaskConfig
    net: MultitaskNet
    history: dict[str, list[float]]
    scaler: MinMaxScaler | None = None

    @property
    def weights(self) -> dict[str, np.ndarray]:
        return self.net.parameters()

    def save(self, path) -> None:
        header = {
            "config": self.config.to_dict(),
            "scaler": self.scaler.to_dict() if self.scaler else None,
            "history": self.history,
        }
        nn.save_checkpoint(path, self.net.parameters(), header)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        tensors, header = nn.load_checkpoint(path)
        config = MultitaskConfig.from_dict(header["config"])
        net = MultitaskNet(config)
        net.load_parameters(tensors)
        scaler = MinMaxScaler.from_dict(header["scaler"]) if header.get("scaler") else None
        return cls(config, net, header["history"], scaler)


def train(model: MultitaskNet, train_matrix: FeatureMatrix | tuple, config: MultitaskConfig | None = None) -> TrainedModel:
    """Mini-batch Adam on the joint loss; deterministic given ``config.seed``."""
    config = config or model.config
    if isinstance(train_matrix, FeatureMatrix):
        x, y, scaler = train_matrix.values, train_matrix.labels, train_matrix.scaler
    else:
        (x, y), scaler = train_matrix, None
    x = np.asarray(x, dtype=nn.DTYPE)
    y = np.asarray(y, dtype=nn.DTYPE)
    if len(x) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    state = nn.AdamState(config.lr, config.beta1, config.beta2, config.epsilon)
    params = {"flat": model.flat}
    alpha = config.loss_mix_alpha
    n = len(x)
    history = {k: [] for k in HISTORY_KEYS}
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = dict.fromkeys(HISTORY_KEYS, 0.0)
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb, yb = x[idx], y[idx]
            recon, prob, latent, caches = model.forward(xb)
            parts = model.losses(xb, yb, recon, prob, latent)
            if not np.isfinite(parts["total"]):
                raise nn.NumericalError(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads = model.backward(xb, yb, recon, prob, latent, caches, alpha)
            nn.adam_step(params, {"flat": model.flatten_grads(grads)}, state)
            w = len(idx)
            for k in ("total", "bce", "mse", "l1"):
                sums[k] += parts[k] * w
            sums["accuracy"] += float(np.sum((prob >= 0.5) == (yb == 1)))
        for k in HISTORY_KEYS:
            history[k].append(sums[k] / n)
    return TrainedModel(config, model, history, scaler)


def predict(model: TrainedModel, rows, threshold: float = 0.5):
    """Labels (1 iff probability >= threshold) and probabilities."""
    values = rows.values if isinstance(rows, FeatureMatrix) else np.asarray(rows, dtype=nn.DTYPE)
    if values.ndim != 2 or values.shape[1] != model.config.input_dim:
        raise nn.ShapeError(f"expected {model.config.input_dim} columns, got shape {values.shape}")
    _, prob, _, _ = model.net.forward(values)
    return (prob >= threshold).astype(np.int64), prob


def extract_augmented_features(model: TrainedModel | MultitaskNet, rows) -> np.ndarray:
    """Encoder-only view: n_rows x latent_dim."""
    net = model.net if isinstance(model, TrainedModel) else model
    values = rows.values if isinstance(rows, FeatureMatrix) else np.asarray(rows, dtype=nn.DTYPE)
    if net.config.sae is None:
        raise ConfigError("model has no autoencoder")
    if values.ndim != 2 or values.shape[1] != net.config.sae.input_dim:
        raise nn.ShapeError(f"expected {net.config.sae.input_dim} columns, got shape {values.shape}")
    return net.encode(values)


def active_fraction(latent: np.ndarray, threshold: float = 0.1) -> float:
    """Mean fraction of latent units whose activation exceeds ``threshold``."""
    return float(np.mean(np.abs(latent) > threshold))


class NetworkClassifier:
    """fit/predict adapter so the networks plug into the CV harness."""

    def __init__(self, config: MultitaskConfig):
        self.config = config
        self.model: TrainedModel | None = None

    def fit(self, x, y) -> "NetworkClassifier":
        self.model = train(build_model(self.config), (x, y))
        return self

    def predict(self, x):
        return predict(self.model, x)[0]

    def save(self, path: str | Path) -> None:
        self.model.save(path)

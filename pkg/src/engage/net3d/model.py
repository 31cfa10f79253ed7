"""Compact 3D-CNN for action classification on pseudo-heatmap volumes.

Layout: stem conv -> three conv/ReLU stages (downsampling by stride) ->
global average pool -> linear head. The five parameterized layers are
named ``stem``, ``stage1``, ``stage2``, ``stage3`` and ``head``; freezing a
prefix of length ``k`` keeps the first ``k`` of them fixed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .layers import Conv3d, GlobalAvgPool3d, Layer, Linear, ReLU

PARAM_LAYERS = ("stem", "stage1", "stage2", "stage3", "head")


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 11
    num_classes: int = 13
    stem_channels: int = 32
    stage_channels: tuple[int, int, int] = (32, 64, 128)
    kernel: tuple[int, int, int] = (3, 3, 3)
    stem_stride: tuple[int, int, int] = (2, 2, 2)
    stage_strides: tuple[tuple[int, int, int], ...] = ((1, 2, 2), (2, 2, 2), (2, 2, 2))
    freeze_prefix: int = 0
    dtype: str = "float32"
    # fixed gain on the input; heatmap volumes are sparse (std ~ 1/60), and
    # without normalization layers the signal would otherwise vanish
    input_scale: float = 60.0

    def __post_init__(self):
        if len(self.stage_channels) != 3 or len(self.stage_strides) != 3:
            raise ValueError("exactly three stages are supported")
        if not 0 <= self.freeze_prefix <= len(PARAM_LAYERS):
            raise ValueError(f"freeze_prefix must lie in [0, {len(PARAM_LAYERS)}]")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be > 0")


class Net3D:
    """Network holding its layers; all batch tensors are ``(N, C, T, H, W)``."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        dt = np.dtype(config.dtype)
        c = config
        chans = (c.stem_channels,) + tuple(c.stage_channels)
        self.named: dict[str, Layer] = {
            "stem": Conv3d(c.in_channels, c.stem_channels, c.kernel, c.stem_stride, rng, dt),
            "stage1": Conv3d(chans[0], chans[1], c.kernel, c.stage_strides[0], rng, dt),
            "stage2": Conv3d(chans[1], chans[2], c.kernel, c.stage_strides[1], rng, dt),
            "stage3": Conv3d(chans[2], chans[3], c.kernel, c.stage_strides[2], rng, dt),
            "head": Linear(chans[3], c.num_classes, rng, dt),
        }
        n = self.named
        self.layers: list[tuple[str | None, Layer]] = [
            ("stem", n["stem"]), (None, ReLU()),
            ("stage1", n["stage1"]), (None, ReLU()),
            ("stage2", n["stage2"]), (None, ReLU()),
            ("stage3", n["stage3"]), (None, ReLU()),
            (None, GlobalAvgPool3d()),
            ("head", n["head"]),
        ]

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    @property
    def frozen(self) -> tuple[str, ...]:
        return PARAM_LAYERS[: self.config.freeze_prefix]

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat ``{"layer.param": array}`` view (arrays are live references)."""
        return {f"{name}.{p}": arr for name in PARAM_LAYERS
                for p, arr in self.named[name].params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{name}.{p}": arr for name in PARAM_LAYERS
                for p, arr in self.named[name].grads.items()}

    def zero_grad(self) -> None:
        for layer in self.named.values():
            for g in layer.grads.values():
                g[...] = 0

    def set_freeze_prefix(self, k: int) -> None:
        from dataclasses import replace
        self.config = replace(self.config, freeze_prefix=k)

    def _check(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 4:
            x = x[None]
        if x.ndim != 5 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(
                f"expected volumes of shape (N, {self.config.in_channels}, T, H, W), got {x.shape}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Logits ``(N, num_classes)`` for a batch (or a single volume)."""
        x = self._check(np.asarray(x))
        h = np.ascontiguousarray(x.transpose(1, 0, 2, 3, 4), dtype=self.dtype)
        if self.config.input_scale != 1.0:
            h = h * self.dtype.type(self.config.input_scale)
        for _, layer in self.layers:
            h = layer.forward(h)
        return h

    def backward(self, dlogits: np.ndarray) -> None:
        """Accumulate parameter gradients from ``dL/dlogits``.

        Frozen layers get no gradient, and input gradients are only
        propagated as far down as a trainable layer still needs them.
        """
        frozen = set(self.frozen)
        # index of the lowest trainable parameter layer in self.layers
        trainable_pos = [i for i, (name, _) in enumerate(self.layers)
                         if name is not None and name not in frozen]
        if not trainable_pos:
            return
        lowest = trainable_pos[0]
        # frozen layers form a prefix, so everything below `lowest` is frozen
        g = np.asarray(dlogits, dtype=self.dtype)
        for i in range(len(self.layers) - 1, lowest - 1, -1):
            g = self.layers[i][1].backward(g, need_dx=i > lowest)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def weighted_cross_entropy(logits, label: int, weights=None) -> float:
    """``-w[label] * log softmax(logits)[label]`` (log-sum-exp stabilized)."""
    z = np.asarray(logits, dtype=np.float64)
    w = 1.0 if weights is None else float(np.asarray(weights, dtype=np.float64)[label])
    return float(-w * log_softmax(z)[label])


def weighted_cross_entropy_grad(logits, label: int, weights=None) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    w = 1.0 if weights is None else float(np.asarray(weights, dtype=np.float64)[label])
    g = softmax(z)
    g[label] -= 1.0
    return w * g


def batch_loss(logits: np.ndarray, labels: np.ndarray, weights=None) -> tuple[float, np.ndarray]:
    """Mean weighted cross-entropy over a batch and its gradient w.r.t. logits."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    w = np.ones(z.shape[1]) if weights is None else np.asarray(weights, dtype=np.float64)
    ls = log_softmax(z)
    rows = np.arange(n)
    wy = w[labels]
    loss = float(np.sum(-wy * ls[rows, labels]) / n)
    g = np.exp(ls)
    g[rows, labels] -= 1.0
    g *= (wy / n)[:, None]
    return loss, g


def forward(model: Net3D, volume: np.ndarray) -> np.ndarray:
    """Logits of a single volume ``(K, T, H, W)``."""
    volume = np.asarray(volume)
    if volume.ndim != 4:
        raise ShapeMismatch(f"expected a (K, T, H, W) volume, got {volume.shape}")
    return model.forward(volume[None])[0].astype(np.float64)


def backward(model: Net3D, volumes: np.ndarray, labels, weights=None) -> dict[str, np.ndarray]:
    """Gradients of the mean weighted loss over ``volumes`` (one or a batch).

    Returns a fresh dict of gradient arrays for every parameter; entries of
    frozen layers are zero.
    """
    volumes = np.asarray(volumes)
    if volumes.ndim == 4:
        volumes = volumes[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    model.zero_grad()
    logits = model.forward(volumes)
    _, dlogits = batch_loss(logits, labels, weights)
    model.backward(dlogits)
    return {k: v.copy() for k, v in model.gradients().items()}


def predict_proba(model: Net3D, volumes: np.ndarray, batch_size: int = 32) -> np.ndarray:
    volumes = np.asarray(volumes)
    if volumes.ndim == 4:
        volumes = volumes[None]
    out = [softmax(model.forward(volumes[i:i + batch_size]))
           for i in range(0, len(volumes), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes))


def predict(model: Net3D, volume: np.ndarray) -> tuple[int, np.ndarray]:
    """Top-1 class (lowest index on ties) and the probability vector."""
    probs = softmax(forward(model, volume))
    return int(np.argmax(probs)), probs

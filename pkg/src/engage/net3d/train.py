"""SGD-with-momentum training loop and class weighting."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import EmptyDataset, LabelOutOfRange
from .model import ModelConfig, Net3D, batch_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 140
    batch_size: int = 16
    learning_rate: float = 0.0025
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size must be >= 1 and learning_rate > 0")


def inverse_frequency_weights(labels: Sequence[int], num_classes: int = 13) -> np.ndarray:
    """``w_k = N / (num_classes * n_k)``; classes absent from ``labels`` get 1."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    w = np.ones(num_classes)
    present = counts > 0
    w[present] = len(labels) / (num_classes * counts[present])
    return w


def _stack(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        X, y = dataset
    else:
        if len(dataset) == 0:
            raise EmptyDataset("training set is empty")
        X = np.stack([np.asarray(v, dtype=np.float32) for v, _ in dataset])
        y = np.array([int(lbl) for _, lbl in dataset])
    return X, np.asarray(y, dtype=np.int64)


class SGD:
    """``v <- mu * v - lr * g``; ``p <- p + v`` on the unfrozen parameters."""

    def __init__(self, model: Net3D, lr: float, momentum: float):
        self.model, self.lr, self.momentum = model, lr, momentum
        self.velocity = {k: np.zeros_like(v) for k, v in model.parameters().items()}

    def step(self) -> None:
        frozen = self.model.frozen
        grads = self.model.gradients()
        for key, p in self.model.parameters().items():
            if key.split(".", 1)[0] in frozen:
                continue
            v = self.velocity[key]
            v *= self.momentum
            v -= self.lr * grads[key]
            p += v


def train(dataset, config: TrainConfig = TrainConfig(),
          model_config: ModelConfig = ModelConfig(), weights=None,
          model: Net3D | None = None,
          on_epoch: Callable[[int, float], None] | None = None) -> tuple[Net3D, list[float]]:
    """Train (or fine-tune ``model``) and return it with the per-epoch mean loss.

    ``dataset`` is a list of ``(volume, label)`` pairs or an ``(X, y)`` tuple
    of stacked arrays. ``weights`` defaults to inverse-frequency class
    weights. Shuffling and initialization derive from ``config.seed``.
    """
    X, y = _stack(dataset)
    if len(y) == 0:
        raise EmptyDataset("training set is empty")
    if model is None:
        model = Net3D(model_config, seed=config.seed)
    k = model.config.num_classes
    if y.min() < 0 or y.max() >= k:
        raise LabelOutOfRange(f"labels must lie in [0, {k - 1}]")
    if weights is None:
        weights = inverse_frequency_weights(y, k)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    opt = SGD(model, config.learning_rate, config.momentum)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            model.zero_grad()
            logits = model.forward(X[idx])
            loss, dlogits = batch_loss(logits, y[idx], weights)
            model.backward(dlogits)
            opt.step()
            total += loss * len(idx)
        history.append(total / len(y))
        log.info("epoch %d/%d loss %.5f", epoch + 1, config.epochs, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return model, history

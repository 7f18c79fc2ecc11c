"""Phase-1 trainer: a real-valued net with tanh-compressed weights.

Every weight and bias is stored unconstrained and passed through ``tanh`` on
the forward pass, so the effective parameters sit in (-1, 1) and the trained
net is a relaxed stand-in for a bipolar one. Hidden units use ``tanh``; the
top layer feeds a softmax/cross-entropy head.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite value."""


@dataclass
class RealLayer:
    weights: np.ndarray  # (rows, cols)
    bias: np.ndarray  # (rows,)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> RealLayer:
        return RealLayer(self.weights.copy(), self.bias.copy())


@dataclass
class RealNetwork:
    layers: list[RealLayer]

    def __post_init__(self) -> None:
        for lower, upper in zip(self.layers, self.layers[1:]):
            if lower.rows != upper.cols:
                raise ValueError(f"layer sizes do not chain: {lower.rows} -> {upper.cols}")
        for layer in self.layers:
            if layer.bias.shape != (layer.rows,):
                raise ValueError(f"bias shape {layer.bias.shape} does not match {layer.rows} rows")

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].cols] + [layer.rows for layer in self.layers]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].rows

    def copy(self) -> RealNetwork:
        return RealNetwork([layer.copy() for layer in self.layers])

    @classmethod
    def initialize(cls, sizes: Sequence[int], rng: np.random.Generator, scale: float = 0.1) -> RealNetwork:
        """Uniform(-scale, scale) weights, zero biases."""
        layers = [
            RealLayer(rng.uniform(-scale, scale, size=(rows, cols)), np.zeros(rows))
            for cols, rows in zip(sizes[:-1], sizes[1:])
        ]
        return cls(layers)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> RealNetwork:
        return cls([RealLayer(np.zeros((r, c)), np.zeros(r)) for c, r in zip(sizes[:-1], sizes[1:])])


@dataclass
class TrainConfig:
    lr: float = 0.1
    lr_decay: float = 0.99
    batch_size: int = 100
    epochs: int = 100
    seed: int = 0
    keep_input: float = 0.8
    keep_hidden: float = 0.5
    # "mean": step with the batch-averaged gradient; "sum": the raw batch sum
    reduction: str = "mean"

    def __post_init__(self) -> None:
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        for name in ("keep_input", "keep_hidden"):
            p = getattr(self, name)
            if not 0.0 < p <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {p}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class TrainState:
    config: TrainConfig
    rng: np.random.Generator
    epoch: int = 0

    @classmethod
    def start(cls, config: TrainConfig, stream: int = 1) -> TrainState:
        return cls(config, np.random.default_rng([config.seed, stream]))

    @property
    def lr(self) -> float:
        return self.config.lr * self.config.lr_decay**self.epoch


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer after dropout, (B, cols)
    preacts: list[np.ndarray]  # (B, rows)
    masks: list[np.ndarray | None]
    probs: np.ndarray


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_err: float
    test_err: float = math.nan
    extra: dict = field(default_factory=dict)

    def line(self) -> str:
        s = f"epoch={self.epoch} loss={self.loss:.6f} train_err={self.train_err:.6f} test_err={self.test_err:.6f}"
        for key, value in self.extra.items():
            s += f" {key}={value:.6f}"
        return s


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Summed negative log-likelihood of the labelled classes."""
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.log(np.maximum(picked, np.finfo(float).tiny)).sum())


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def forward_compressed(
    net: RealNetwork, x: np.ndarray, masks: Sequence[np.ndarray | None] | None = None
) -> ForwardCache:
    """Relaxed forward pass.

    ``masks[l]``, if given, multiplies the input of layer ``l`` (the data for
    ``l = 0``, hidden activations otherwise); dropped entries are 0 and kept
    entries carry the inverted-dropout scale ``1 / keep``.
    """
    z = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if z.shape[1] != net.layers[0].cols:
        raise ValueError(f"input width {z.shape[1]} != {net.layers[0].cols}")
    masks = list(masks) if masks is not None else [None] * len(net.layers)
    if len(masks) != len(net.layers):
        raise ValueError("need one dropout mask slot per layer")
    inputs, preacts = [], []
    for idx, layer in enumerate(net.layers):
        if masks[idx] is not None:
            z = z * masks[idx]
        inputs.append(z)
        a = z @ np.tanh(layer.weights).T + np.tanh(layer.bias)
        preacts.append(a)
        if idx + 1 < len(net.layers):
            z = np.tanh(a)
    probs = softmax(preacts[-1])
    if not np.all(np.isfinite(probs)):
        raise DivergenceError("non-finite activation in forward pass")
    return ForwardCache(inputs, preacts, masks, probs)


def backward_compressed(
    net: RealNetwork, cache: ForwardCache, labels: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of the summed cross-entropy w.r.t. the uncompressed parameters."""
    labels = np.atleast_1d(labels)
    if labels.shape[0] != cache.probs.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for a batch of {cache.probs.shape[0]}")
    delta = cache.probs - one_hot(labels, net.n_classes)
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        w_eff = np.tanh(layer.weights)
        g_w = (delta.T @ cache.inputs[idx]) * (1.0 - w_eff**2)
        g_b = delta.sum(axis=0) * (1.0 - np.tanh(layer.bias) ** 2)
        grads.append((g_w, g_b))
        if idx > 0:
            delta = (delta @ w_eff) * (1.0 - np.tanh(cache.preacts[idx - 1]) ** 2)
            if cache.masks[idx] is not None:
                delta = delta * cache.masks[idx]
    grads.reverse()
    return grads


def dropout_masks(
    sizes: Sequence[int], batch: int, config: TrainConfig, rng: np.random.Generator
) -> list[np.ndarray | None]:
    masks: list[np.ndarray | None] = []
    for idx, width in enumerate(sizes[:-1]):
        keep = config.keep_input if idx == 0 else config.keep_hidden
        if keep >= 1.0:
            masks.append(None)
        else:
            masks.append((rng.random((batch, width)) < keep) / keep)
    return masks


def predict(net: RealNetwork, x: np.ndarray, chunk: int = 2000) -> np.ndarray:
    x = np.atleast_2d(x)
    out = [forward_compressed(net, x[s : s + chunk]).probs.argmax(axis=1) for s in range(0, x.shape[0], chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def error_rate(net: RealNetwork, x: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(net, x) != labels)) if labels.size else 0.0


def train_phase1(
    net: RealNetwork,
    x: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    *,
    test: tuple[np.ndarray, np.ndarray] | None = None,
    state: TrainState | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[RealNetwork, list[EpochRecord]]:
    """Minibatch SGD on the compressed net; updates ``net`` in place.

    Each step applies ``param -= lr * grad`` to the batch-summed gradients
    from :func:`backward_compressed`, divided by the batch size when
    ``config.reduction == "mean"``. The rate decays by ``lr_decay`` per epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != net.layers[0].cols:
        raise ValueError(f"dataset width {x.shape[1]} != network input {net.layers[0].cols}")
    state = state or TrainState.start(config)
    records = []
    n = x.shape[0]
    for _ in range(config.epochs):
        lr = state.lr
        order = state.rng.permutation(n)
        loss = 0.0
        wrong = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            masks = dropout_masks(net.sizes, idx.size, config, state.rng)
            cache = forward_compressed(net, x[idx], masks)
            loss += cross_entropy(cache.probs, labels[idx])
            wrong += int(np.sum(cache.probs.argmax(axis=1) != labels[idx]))
            grads = backward_compressed(net, cache, labels[idx])
            step = lr / idx.size if config.reduction == "mean" else lr
            for layer, (g_w, g_b) in zip(net.layers, grads):
                layer.weights -= step * g_w
                layer.bias -= step * g_b
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {state.epoch}")
        state.epoch += 1
        rec = EpochRecord(state.epoch, loss / max(n, 1), wrong / max(n, 1))
        if test is not None:
            rec.test_err = error_rate(net, *test)
        log.info(rec.line())
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return net, records

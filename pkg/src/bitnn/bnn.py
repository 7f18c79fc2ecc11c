"""Phase-2 training by noisy backpropagation, and bitwise inference.

The forward pass runs entirely on packed ternary weights and bipolar signals.
Errors flow back through the same ternary weights with no activation
derivative, and the resulting gradients update real-valued shadow
parameters. The shadow is re-ternarized at every epoch boundary.

All reductions in :func:`backward_noisy` accumulate in a fixed ascending
order (over the batch for parameter gradients, over output units for hidden
errors). Products involve only +/-1/0 factors and are therefore exact, so the
results do not depend on BLAS blocking and are reproducible bit-for-bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .bitcore import BitPlane, TernaryLayer, layer_forward_words, pack_bits, unpack_bipolar
from .realnet import DivergenceError, EpochRecord, RealNetwork, cross_entropy, one_hot, softmax
from .ternarize import TernarizeSpec, layer_betas, ternarize_layers

log = logging.getLogger(__name__)


@dataclass
class BnnConfig:
    """Phase-2 hyperparameters.

    The default ``lr`` is tiny because hidden errors carry no activation
    derivative: each layer of back-propagation through ±1 weights grows the
    error roughly by the square root of the layer width, so first-layer
    gradients run thousands of times larger than output-layer ones. Tuned on
    784-256-256-256-10 bipolar MNIST; 5e-8 and above destabilize the first
    layer.
    """

    lr: float = 2e-8
    lr_decay: float = 0.99
    batch_size: int = 100
    epochs: int = 50
    seed: int = 0
    reduction: str = "mean"

    def __post_init__(self) -> None:
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class BnnState:
    layers: list[TernaryLayer]
    shadow: RealNetwork
    spec: TernarizeSpec
    betas: list[tuple[float, float]]
    freeze_beta: bool = False
    epoch: int = 0
    _dense: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_real(cls, net: RealNetwork, spec: TernarizeSpec, freeze_beta: bool = False) -> BnnState:
        shadow = net.copy()
        betas = layer_betas(shadow, spec)
        return cls(ternarize_layers(shadow, betas), shadow, spec, betas, freeze_beta)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].cols] + [layer.rows for layer in self.layers]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].rows

    def dense_weights(self) -> list[np.ndarray]:
        if self._dense is None:
            self._dense = [layer.dense_weights().astype(np.float64) for layer in self.layers]
        return self._dense

    def rebinarize(self) -> None:
        """Re-ternarize the shadow; boundaries are re-derived unless frozen."""
        if not self.freeze_beta:
            self.betas = layer_betas(self.shadow, self.spec)
        self.layers = ternarize_layers(self.shadow, self.betas)
        self._dense = None

    def sparsity(self) -> float:
        total = sum(layer.rows * layer.cols for layer in self.layers)
        zeros = sum(layer.sparsity() * layer.rows * layer.cols for layer in self.layers)
        return zeros / total if total else 0.0


@dataclass
class BinaryCache:
    inputs: list[np.ndarray]  # bipolar input of each layer as float +/-1, (B, cols)
    preacts: list[np.ndarray]  # int64, (B, rows)

    @property
    def scores(self) -> np.ndarray:
        return self.preacts[-1]


def _as_words(x) -> np.ndarray:
    if isinstance(x, BitPlane):
        return x.words[None, :]
    x = np.asarray(x, dtype=np.uint64)
    return x[None, :] if x.ndim == 1 else x


def forward_binary(layers: Sequence[TernaryLayer], x_words) -> BinaryCache:
    """Bitwise forward pass; ``x_words`` is a BitPlane or (N, words) packed inputs."""
    words = _as_words(x_words)
    z = unpack_bipolar(words, layers[0].cols).astype(np.float64)
    inputs, preacts = [], []
    for idx, layer in enumerate(layers):
        inputs.append(z)
        a = layer_forward_words(layer, words)
        preacts.append(a)
        if idx + 1 < len(layers):
            positive = a >= 0
            words = pack_bits(positive)
            z = np.where(positive, 1.0, -1.0)
    return BinaryCache(inputs, preacts)


def score_temperature(layers: Sequence[TernaryLayer]) -> float:
    return math.sqrt(layers[-1].cols)


def class_probs(layers: Sequence[TernaryLayer], scores: np.ndarray) -> np.ndarray:
    return softmax(scores / score_temperature(layers))


def predict_scores(scores: np.ndarray) -> np.ndarray:
    """Argmax over integer scores; ties go to the lowest class index."""
    return np.argmax(scores, axis=1)


@numba.njit(cache=True)
def _ordered_outer_sum(delta, z):  # pragma: no cover - compiled
    rows, cols = delta.shape[1], z.shape[1]
    out = np.zeros((rows, cols))
    for n in range(delta.shape[0]):
        for i in range(rows):
            d = delta[n, i]
            for j in range(cols):
                out[i, j] += d * z[n, j]
    return out


@numba.njit(cache=True)
def _ordered_row_sum(delta):  # pragma: no cover - compiled
    out = np.zeros(delta.shape[1])
    for n in range(delta.shape[0]):
        for i in range(delta.shape[1]):
            out[i] += delta[n, i]
    return out


@numba.njit(cache=True)
def _ordered_backprop(delta, weights):  # pragma: no cover - compiled
    batch, cols = delta.shape[0], weights.shape[1]
    out = np.zeros((batch, cols))
    for n in range(batch):
        for i in range(weights.shape[0]):
            d = delta[n, i]
            for j in range(cols):
                out[n, j] += d * weights[i, j]
    return out


def output_error(layers: Sequence[TernaryLayer], scores: np.ndarray, labels) -> np.ndarray:
    """Softmax-head error ``softmax(scores / sqrt(K)) - onehot`` per sample."""
    labels = np.atleast_1d(np.asarray(labels))
    if labels.shape[0] != scores.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for a batch of {scores.shape[0]}")
    return class_probs(layers, scores) - one_hot(labels, layers[-1].rows)


def propagate_noisy(
    layers: Sequence[TernaryLayer],
    cache: BinaryCache,
    delta: np.ndarray,
    dense: Sequence[np.ndarray] | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Push an output-layer error down through the ternary weights.

    Hidden errors are plain ternary-weighted sums of the errors above them;
    the sign nonlinearity contributes no derivative factor. Gradients are
    summed over the batch and use the binary input signals of each layer.
    """
    if len(cache.preacts) != len(layers) or delta.shape != cache.scores.shape:
        raise ValueError("cache does not match the layers or the output error")
    if dense is None:
        dense = [layer.dense_weights().astype(np.float64) for layer in layers]
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for idx in range(len(layers) - 1, -1, -1):
        z = np.ascontiguousarray(cache.inputs[idx], dtype=np.float64)
        grads.append((_ordered_outer_sum(delta, z), _ordered_row_sum(delta)))
        if idx > 0:
            delta = _ordered_backprop(delta, np.ascontiguousarray(dense[idx], dtype=np.float64))
    grads.reverse()
    return grads


def backward_noisy(
    layers: Sequence[TernaryLayer],
    cache: BinaryCache,
    labels,
    dense: Sequence[np.ndarray] | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Batch-summed shadow gradients for the softmax/cross-entropy head."""
    return propagate_noisy(layers, cache, output_error(layers, cache.scores, labels), dense)


@dataclass
class EvalResult:
    error: float
    n: int
    bit_error_hist: np.ndarray | None = None


def evaluate(
    layers: Sequence[TernaryLayer],
    x_words: np.ndarray,
    labels: np.ndarray,
    bit_errors: bool = False,
    chunk: int = 1000,
) -> EvalResult:
    """Classification error of the bitwise net.

    With ``bit_errors``, also histogram the per-sample Hamming distance
    between the signed output units and the bipolar one-hot target.
    """
    x_words = _as_words(x_words)
    n = labels.shape[0]
    n_classes = layers[-1].rows
    wrong = 0
    hist = np.zeros(n_classes + 1, dtype=np.int64)
    for start in range(0, n, chunk):
        scores = forward_binary(layers, x_words[start : start + chunk]).scores
        y = labels[start : start + chunk]
        wrong += int(np.sum(predict_scores(scores) != y))
        if bit_errors:
            out_bits = scores >= 0
            target_bits = one_hot(y, n_classes) > 0
            hist += np.bincount((out_bits != target_bits).sum(axis=1), minlength=n_classes + 1)
    return EvalResult(wrong / n if n else 0.0, n, hist if bit_errors else None)


def train_phase2(
    state: BnnState,
    x_words: np.ndarray,
    labels: np.ndarray,
    config: BnnConfig,
    *,
    test: tuple[np.ndarray, np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    forward: Callable[[Sequence[TernaryLayer], np.ndarray], BinaryCache] = forward_binary,
) -> tuple[BnnState, list[EpochRecord]]:
    """Noisy backpropagation; mutates ``state`` in place.

    Per minibatch the shadow takes ``param -= lr * grad`` (grad averaged over
    the batch unless ``config.reduction == "sum"``); the ternary
    parameters stay fixed within an epoch and are rebuilt from the shadow at
    its end.
    """
    x_words = np.asarray(x_words, dtype=np.uint64)
    rng = rng if rng is not None else np.random.default_rng([config.seed, 2])
    n = labels.shape[0]
    records = []
    for _ in range(config.epochs):
        lr = config.lr * config.lr_decay**state.epoch
        order = rng.permutation(n)
        dense = state.dense_weights()
        loss = 0.0
        wrong = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            cache = forward(state.layers, x_words[idx])
            probs = class_probs(state.layers, cache.scores)
            loss += cross_entropy(probs, labels[idx])
            wrong += int(np.sum(predict_scores(cache.scores) != labels[idx]))
            grads = backward_noisy(state.layers, cache, labels[idx], dense)
            step = lr / idx.size if config.reduction == "mean" else lr
            for layer, (g_w, g_b) in zip(state.shadow.layers, grads):
                layer.weights -= step * g_w
                layer.bias -= step * g_b
        if not math.isfinite(loss) or not all(
            np.all(np.isfinite(layer.weights)) for layer in state.shadow.layers
        ):
            raise DivergenceError(f"non-finite shadow parameters at epoch {state.epoch}")
        state.rebinarize()
        state.epoch += 1
        rec = EpochRecord(state.epoch, loss / max(n, 1), wrong / max(n, 1), extra={"sparsity": state.sparsity()})
        if test is not None:
            rec.test_err = evaluate(state.layers, *test).error
        log.info(rec.line())
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return state, records

"""Sparsity-driven ternarization of real parameters into {-1, 0, +1}."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitcore import TernaryLayer
from .realnet import RealNetwork


@dataclass(frozen=True)
class TernarizeSpec:
    sparsity: float = 0.0
    # when False, a layer's weights and bias share one boundary
    separate_bias: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError(f"sparsity must lie in [0, 1), got {self.sparsity}")


def zero_count(n: int, sparsity: float) -> int:
    """Target number of zeros, ``round(sparsity * n)`` with halves rounded up."""
    return int(np.floor(sparsity * n + 0.5))


def compute_beta(values, sparsity: float) -> float:
    """Magnitude boundary: the k-th smallest ``|value|`` with k = round(sparsity * N).

    Entries with ``|value| <= beta`` become zero, so ties at the boundary all
    go to zero. ``k == 0`` gives ``beta == 0``.
    """
    mags = np.abs(np.asarray(values, dtype=np.float64).reshape(-1))
    if mags.size == 0:
        raise ValueError("cannot compute a boundary for an empty tensor")
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    k = zero_count(mags.size, sparsity)
    if k == 0:
        return 0.0
    return float(np.partition(mags, k - 1)[k - 1])


def ternarize_tensor(values, beta: float) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return np.where(np.abs(values) <= beta, 0, np.sign(values)).astype(np.int8)


@dataclass
class Ternarized:
    layers: list[TernaryLayer]
    shadow: RealNetwork
    betas: list[tuple[float, float]]  # (weight boundary, bias boundary) per layer


def layer_betas(net: RealNetwork, spec: TernarizeSpec) -> list[tuple[float, float]]:
    betas = []
    for layer in net.layers:
        if spec.separate_bias:
            betas.append((compute_beta(layer.weights, spec.sparsity), compute_beta(layer.bias, spec.sparsity)))
        else:
            beta = compute_beta(np.concatenate([layer.weights.ravel(), layer.bias]), spec.sparsity)
            betas.append((beta, beta))
    return betas


def ternarize_layers(net: RealNetwork, betas: list[tuple[float, float]]) -> list[TernaryLayer]:
    return [
        TernaryLayer.from_dense(ternarize_tensor(layer.weights, bw), ternarize_tensor(layer.bias, bb))
        for layer, (bw, bb) in zip(net.layers, betas)
    ]


def ternarize_network(
    net: RealNetwork, spec: TernarizeSpec, betas: list[tuple[float, float]] | None = None
) -> Ternarized:
    """Ternarize every weight tensor and bias vector with its own boundary.

    Pass ``betas`` to reuse fixed boundaries instead of re-deriving them from
    ``spec.sparsity``. The returned shadow is a copy of ``net``.
    """
    if betas is None:
        betas = layer_betas(net, spec)
    return Ternarized(ternarize_layers(net, betas), net.copy(), betas)

"""Hand-built bitwise networks for two-input Boolean problems.

Inputs are bipolar pairs ``(x1, x2)``. The XOR net uses the two hidden
hyperplanes ``x1 - x2 + 1 > 0`` and ``-x1 + x2 + 1 > 0``; both fire exactly
when the inputs agree, so the output unit is their negated sum plus one.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .bitcore import TernaryLayer
from .realnet import RealLayer, RealNetwork

POINTS = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=np.int8)

XOR_HIDDEN_W = [[1, -1], [-1, 1]]
XOR_HIDDEN_B = [1, 1]
XOR_OUTPUT_W = [[-1, -1]]
XOR_OUTPUT_B = [1]


def xor_targets() -> np.ndarray:
    """Bipolar XOR of each row of :data:`POINTS` (+1 when the inputs differ)."""
    return np.where(POINTS[:, 0] != POINTS[:, 1], 1, -1).astype(np.int8)


def xor_network() -> list[TernaryLayer]:
    """2-2-1 net with a single sign output."""
    return [
        TernaryLayer.from_dense(XOR_HIDDEN_W, XOR_HIDDEN_B),
        TernaryLayer.from_dense(XOR_OUTPUT_W, XOR_OUTPUT_B),
    ]


def xor_classifier() -> list[TernaryLayer]:
    """2-2-2 version for argmax classification: class 1 means "inputs differ"."""
    out_w = np.array([[-w for w in XOR_OUTPUT_W[0]], XOR_OUTPUT_W[0]])
    out_b = np.array([-XOR_OUTPUT_B[0], XOR_OUTPUT_B[0]])
    return [TernaryLayer.from_dense(XOR_HIDDEN_W, XOR_HIDDEN_B), TernaryLayer.from_dense(out_w, out_b)]


def copy_x2_network() -> list[TernaryLayer]:
    """One unit computing y = x2: the weight on x1 and the bias are inactive."""
    return [TernaryLayer.from_dense([[0, 1]], [0])]


def as_real(layers: list[TernaryLayer]) -> RealNetwork:
    return RealNetwork(
        [RealLayer(layer.dense_weights().astype(float), layer.dense_bias().astype(float)) for layer in layers]
    )


def write_xor_idx(directory) -> None:
    """Write the four XOR points as train and t10k IDX files (1x2 "images")."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pixels = np.where(POINTS > 0, 255, 0).astype(np.uint8)
    labels = (xor_targets() > 0).astype(np.uint8)
    for prefix in ("train", "t10k"):
        (directory / f"{prefix}-images-idx3-ubyte").write_bytes(
            struct.pack(">IIII", 0x00000803, len(POINTS), 1, 2) + pixels.tobytes()
        )
        (directory / f"{prefix}-labels-idx1-ubyte").write_bytes(
            struct.pack(">II", 0x00000801, len(POINTS)) + labels.tobytes()
        )


def fixture_dir() -> Path:
    return Path(__file__).with_name("fixtures")

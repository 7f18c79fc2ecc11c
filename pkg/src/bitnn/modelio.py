"""Binary model files.

Layout, all integers little-endian::

    magic      4s   b"BNNF"
    version    u32
    phase      u8   0 = real, 1 = ternary
    encoding   u8   0 = bipolar, 1 = binary01, 2 = fixed2
    flags      u16  bit 0: boundaries frozen (ternary only)
    n_layers   u32
    dims       u32 * (n_layers + 1)      K0 .. KL
    sparsity   f64
    epoch      u32                        epochs of training applied so far
    payload
    crc32      u32  over every preceding byte

Real payload: for each layer, the weight matrix (rows x cols, row-major f64)
then the bias (rows f64).

Ternary payload: for each layer, sign words (rows x words u64), mask words,
bias sign words, bias mask words, then the weight and bias boundaries
(2 x f64). The real shadow parameters follow in the real-payload layout, so
phase-2 training can be resumed from the file.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bitcore import BitPlane, TernaryLayer, word_count
from .bnn import BnnState
from .dataio import Encoding
from .realnet import RealLayer, RealNetwork
from .ternarize import TernarizeSpec

MAGIC = b"BNNF"
VERSION = 1
PHASE_REAL = 0
PHASE_TERNARY = 1
PHASE_NAMES = {PHASE_REAL: "real", PHASE_TERNARY: "ternary"}

_HEAD = struct.Struct("<4sIBBHI")
_TAIL = struct.Struct("<dI")


class ModelFormatError(ValueError):
    pass


class ChecksumError(ModelFormatError):
    pass


class PhaseMismatchError(ModelFormatError):
    pass


@dataclass
class ModelFile:
    phase: int
    encoding: Encoding
    real: RealNetwork  # trained net (real phase) or shadow parameters (ternary phase)
    layers: list[TernaryLayer] | None = None
    betas: list[tuple[float, float]] | None = None
    sparsity: float = 0.0
    freeze_beta: bool = False
    epoch: int = 0

    @property
    def phase_name(self) -> str:
        return PHASE_NAMES[self.phase]

    @classmethod
    def from_real(cls, net: RealNetwork, encoding: Encoding, epoch: int = 0) -> ModelFile:
        return cls(PHASE_REAL, Encoding(encoding), net, epoch=epoch)

    @classmethod
    def from_state(cls, state: BnnState, encoding: Encoding) -> ModelFile:
        return cls(
            PHASE_TERNARY,
            Encoding(encoding),
            state.shadow,
            layers=list(state.layers),
            betas=list(state.betas),
            sparsity=state.spec.sparsity,
            freeze_beta=state.freeze_beta,
            epoch=state.epoch,
        )

    def to_state(self) -> BnnState:
        if self.phase != PHASE_TERNARY:
            raise PhaseMismatchError("model file holds a real network, not a ternary one")
        return BnnState(
            layers=list(self.layers),
            shadow=self.real,
            spec=TernarizeSpec(self.sparsity),
            betas=list(self.betas),
            freeze_beta=self.freeze_beta,
            epoch=self.epoch,
        )


def _real_payload(net: RealNetwork) -> bytes:
    parts = []
    for layer in net.layers:
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def to_bytes(model: ModelFile) -> bytes:
    sizes = model.real.sizes
    flags = 1 if model.freeze_beta else 0
    out = [
        _HEAD.pack(MAGIC, VERSION, model.phase, model.encoding.code, flags, len(sizes) - 1),
        struct.pack(f"<{len(sizes)}I", *sizes),
        struct.pack("<dI", model.sparsity, model.epoch),
    ]
    if model.phase == PHASE_TERNARY:
        for layer, (bw, bb) in zip(model.layers, model.betas):
            out.append(layer.to_bytes())
            out.append(struct.pack("<2d", bw, bb))
    out.append(_real_payload(model.real))
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("model file truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).astype(dtype[1:], copy=True)


def from_bytes(data: bytes) -> ModelFile:
    if len(data) < _HEAD.size + 4:
        raise ModelFormatError("model file truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if body[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {body[:4]!r}")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC32 mismatch: model file is corrupted")
    r = _Reader(body)
    _, version, phase, enc_code, flags, n_layers = _HEAD.unpack(r.take(_HEAD.size))
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    if phase not in PHASE_NAMES:
        raise ModelFormatError(f"unknown phase tag {phase}")
    sizes = list(struct.unpack(f"<{n_layers + 1}I", r.take(4 * (n_layers + 1))))
    sparsity, epoch = _TAIL.unpack(r.take(_TAIL.size))
    layers, betas = None, None
    if phase == PHASE_TERNARY:
        layers, betas = [], []
        for cols, rows in zip(sizes[:-1], sizes[1:]):
            w = word_count(cols)
            sign = r.array("<u8", rows * w).reshape(rows, w)
            mask = r.array("<u8", rows * w).reshape(rows, w)
            bw = word_count(rows)
            bias_sign = BitPlane(rows, r.array("<u8", bw))
            bias_mask = BitPlane(rows, r.array("<u8", bw))
            layers.append(TernaryLayer(rows, cols, sign, mask, bias_sign, bias_mask))
            betas.append(struct.unpack("<2d", r.take(16)))
    real_layers = []
    for cols, rows in zip(sizes[:-1], sizes[1:]):
        weights = r.array("<f8", rows * cols).reshape(rows, cols)
        real_layers.append(RealLayer(weights, r.array("<f8", rows)))
    if r.pos != len(body):
        raise ModelFormatError(f"{len(body) - r.pos} unexpected trailing bytes")
    return ModelFile(
        phase=phase,
        encoding=Encoding.from_code(enc_code),
        real=RealNetwork(real_layers),
        layers=layers,
        betas=betas,
        sparsity=sparsity,
        freeze_beta=bool(flags & 1),
        epoch=epoch,
    )


def save(model: ModelFile, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path) -> ModelFile:
    return from_bytes(Path(path).read_bytes())

"""Bit-plane containers and the XNOR/popcount feedforward kernel.

Layout: 64-bit words, LSB-first. Bit ``j`` of a plane lives in word ``j // 64``
at position ``j % 64``; a set bit encodes +1 and a clear bit encodes -1.
Pad bits past ``n_bits`` are always zero so whole-word popcounts stay exact.

Ternary weights use two planes per row: ``sign`` (1 means +1) and ``mask``
(1 means the weight is active). An inactive weight is zero and its sign bit
is forced to 0, so equal layers are equal byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORD_BITS = 64

PreActivation = np.ndarray  # int64 vector, exact accumulator values


class DimensionError(ValueError):
    """Operand widths do not line up."""


class DomainError(ValueError):
    """A value outside the allowed set was supplied."""


def word_count(n_bits: int) -> int:
    return (n_bits + WORD_BITS - 1) // WORD_BITS


def _pack_bool(bits: np.ndarray) -> np.ndarray:
    """Pack a (..., n) boolean array into (..., word_count(n)) uint64 words."""
    bits = np.asarray(bits, dtype=bool)
    n = bits.shape[-1]
    n_words = word_count(n)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    pad = n_words * 8 - packed.shape[-1]
    if pad:
        widths = [(0, 0)] * (packed.ndim - 1) + [(0, pad)]
        packed = np.pad(packed, widths)
    packed = np.ascontiguousarray(packed)
    return packed.view("<u8").astype(np.uint64, copy=False).reshape(bits.shape[:-1] + (n_words,))


def _unpack_bool(words: np.ndarray, n_bits: int) -> np.ndarray:
    words = np.ascontiguousarray(np.asarray(words, dtype=np.uint64).astype("<u8"))
    as_bytes = words.view(np.uint8).reshape(words.shape[:-1] + (words.shape[-1] * 8,))
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little", count=n_bits)
    return bits.astype(bool)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack rows of {0,1}/bool values into uint64 words (last axis is packed)."""
    return _pack_bool(bits)


def pack_bipolar(values: np.ndarray) -> np.ndarray:
    """Pack rows of +/-1 values into uint64 words; the last axis is packed."""
    values = np.asarray(values)
    bad = np.flatnonzero((values != 1) & (values != -1))
    if bad.size:
        idx = np.unravel_index(bad[0], values.shape)
        raise DomainError(f"non-bipolar value {values[idx]!r} at index {tuple(int(i) for i in idx)}")
    return _pack_bool(values == 1)


def unpack_bipolar(words: np.ndarray, n_bits: int) -> np.ndarray:
    """Inverse of :func:`pack_bipolar`; returns int8 +/-1 values."""
    return np.where(_unpack_bool(words, n_bits), 1, -1).astype(np.int8)


def popcount(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words)


@dataclass(frozen=True, eq=False)
class BitPlane:
    """A packed bipolar vector."""

    n_bits: int
    words: np.ndarray

    def __post_init__(self) -> None:
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.ndim != 1 or words.size != word_count(self.n_bits):
            raise DimensionError(
                f"{self.n_bits} bits need {word_count(self.n_bits)} words, got shape {words.shape}"
            )
        tail = self.n_bits % WORD_BITS
        if tail and int(words[-1]) >> tail:
            raise DomainError("pad bits beyond n_bits must be zero")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @property
    def word_count(self) -> int:
        return self.words.size

    def unpack(self) -> np.ndarray:
        return unpack_bipolar(self.words, self.n_bits)

    def complement(self) -> BitPlane:
        return BitPlane(self.n_bits, _clear_pad(~self.words, self.n_bits))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitPlane):
            return NotImplemented
        return self.n_bits == other.n_bits and self.words.tobytes() == other.words.tobytes()

    def __hash__(self) -> int:
        return hash((self.n_bits, self.words.tobytes()))

    def __len__(self) -> int:
        return self.n_bits


def _clear_pad(words: np.ndarray, n_bits: int) -> np.ndarray:
    words = np.array(words, dtype=np.uint64)
    tail = n_bits % WORD_BITS
    if tail and words.size:
        words[..., -1] &= np.uint64((1 << tail) - 1)
    return words


def pack(values) -> BitPlane:
    """Pack a bipolar vector into a :class:`BitPlane`.

    >>> pack([1, -1, 1]).words.tolist()
    [5]
    """
    values = np.asarray(values).reshape(-1)
    return BitPlane(values.size, pack_bipolar(values))


def unpack(plane: BitPlane) -> np.ndarray:
    return plane.unpack()


def xnor_dot(sign: BitPlane, mask: BitPlane, inputs: BitPlane) -> int:
    """Integer dot product of a ternary weight row with a bipolar input.

    Computed as ``2 * popcount(~(sign ^ x) & mask) - popcount(mask)``: each
    active weight contributes +1 when it agrees with the input and -1 when it
    does not; inactive weights contribute nothing.
    """
    if not (sign.n_bits == mask.n_bits == inputs.n_bits):
        raise DimensionError(
            f"length mismatch: sign={sign.n_bits} mask={mask.n_bits} input={inputs.n_bits}"
        )
    agree = ~(sign.words ^ inputs.words) & mask.words
    return int(2 * popcount(agree).sum(dtype=np.int64) - popcount(mask.words).sum(dtype=np.int64))


@dataclass(frozen=True, eq=False)
class TernaryLayer:
    """Weights in {-1, 0, +1} and a ternary bias, stored as sign/mask planes.

    ``sign_words`` and ``mask_words`` have shape ``(rows, word_count(cols))``;
    row ``i`` is the packed weight row feeding output unit ``i``.
    """

    rows: int
    cols: int
    sign_words: np.ndarray
    mask_words: np.ndarray
    bias_sign: BitPlane
    bias_mask: BitPlane

    def __post_init__(self) -> None:
        shape = (self.rows, word_count(self.cols))
        for name in ("sign_words", "mask_words"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.uint64)
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.bias_sign.n_bits != self.rows or self.bias_mask.n_bits != self.rows:
            raise DimensionError("bias planes must have one bit per row")
        if np.any(self.sign_words & ~self.mask_words) or np.any(
            self.bias_sign.words & ~self.bias_mask.words
        ):
            raise DomainError("inactive weights must carry sign bit 0")
        popc = popcount(self.mask_words).sum(axis=1, dtype=np.int64)
        popc.setflags(write=False)
        object.__setattr__(self, "_mask_popcount", popc)

    @classmethod
    def from_dense(cls, weights, bias) -> TernaryLayer:
        """Build from integer arrays with entries in {-1, 0, +1}."""
        w = np.asarray(weights)
        b = np.asarray(bias).reshape(-1)
        if w.ndim != 2 or b.size != w.shape[0]:
            raise DimensionError(f"weights {w.shape} and bias {b.shape} do not match")
        for name, arr in (("weights", w), ("bias", b)):
            bad = np.flatnonzero(~np.isin(arr, (-1, 0, 1)))
            if bad.size:
                raise DomainError(f"non-ternary {name} value at flat index {int(bad[0])}")
        rows, cols = w.shape
        return cls(
            rows=rows,
            cols=cols,
            sign_words=_pack_bool(w > 0),
            mask_words=_pack_bool(w != 0),
            bias_sign=BitPlane(rows, _pack_bool(b > 0)),
            bias_mask=BitPlane(rows, _pack_bool(b != 0)),
        )

    def dense_weights(self) -> np.ndarray:
        sign = _unpack_bool(self.sign_words, self.cols)
        mask = _unpack_bool(self.mask_words, self.cols)
        return np.where(mask, np.where(sign, 1, -1), 0).astype(np.int8)

    def dense_bias(self) -> np.ndarray:
        sign = _unpack_bool(self.bias_sign.words, self.rows)
        mask = _unpack_bool(self.bias_mask.words, self.rows)
        return np.where(mask, np.where(sign, 1, -1), 0).astype(np.int8)

    def bias_values(self) -> np.ndarray:
        return self.dense_bias().astype(np.int64)

    def row(self, i: int) -> tuple[BitPlane, BitPlane]:
        return BitPlane(self.cols, self.sign_words[i]), BitPlane(self.cols, self.mask_words[i])

    def sparsity(self) -> float:
        total = self.rows * self.cols
        return 1.0 - float(self._mask_popcount.sum()) / total if total else 0.0

    def to_bytes(self) -> bytes:
        return b"".join(
            arr.astype("<u8").tobytes()
            for arr in (self.sign_words, self.mask_words, self.bias_sign.words, self.bias_mask.words)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TernaryLayer):
            return NotImplemented
        return (self.rows, self.cols) == (other.rows, other.cols) and self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash((self.rows, self.cols, self.to_bytes()))


def sign_bits(preact: np.ndarray) -> np.ndarray:
    """sign() with sign(0) = +1, returned as a boolean "is +1" array."""
    return np.asarray(preact) >= 0


def layer_forward_words(layer: TernaryLayer, x_words: np.ndarray) -> np.ndarray:
    """Batched kernel: ``x_words`` is (N, words) packed inputs, returns (N, rows) int64."""
    x_words = np.asarray(x_words, dtype=np.uint64)
    if x_words.ndim != 2 or x_words.shape[1] != layer.sign_words.shape[1]:
        raise DimensionError(
            f"input words {x_words.shape} do not fit a layer with {layer.cols} columns"
        )
    n = x_words.shape[0]
    out = np.empty((n, layer.rows), dtype=np.int64)
    bias = layer.bias_values()
    # chunk so the (chunk, rows, words) temporary stays near 8 MB
    per_sample = max(1, layer.rows * layer.sign_words.shape[1])
    chunk = max(1, (1 << 20) // per_sample)
    sign = layer.sign_words[None, :, :]
    mask = layer.mask_words[None, :, :]
    for start in range(0, n, chunk):
        xs = x_words[start : start + chunk, None, :]
        agree = popcount(~(sign ^ xs) & mask).sum(axis=2, dtype=np.int64)
        out[start : start + chunk] = 2 * agree - layer._mask_popcount + bias
    return out


def layer_forward(layer: TernaryLayer, inputs: BitPlane) -> tuple[PreActivation, BitPlane]:
    """One bitwise layer: integer pre-activations and their packed signs."""
    if inputs.n_bits != layer.cols:
        raise DimensionError(f"input has {inputs.n_bits} bits, layer expects {layer.cols}")
    preact = layer_forward_words(layer, inputs.words[None, :])[0]
    return preact, BitPlane(layer.rows, _pack_bool(sign_bits(preact)))


def bitwise_error(target: BitPlane, output: BitPlane) -> int:
    """Number of disagreeing bipolar positions (XNOR-based bit error)."""
    if target.n_bits != output.n_bits:
        raise DimensionError(f"target has {target.n_bits} bits, output has {output.n_bits}")
    return int(popcount(target.words ^ output.words).sum(dtype=np.int64))

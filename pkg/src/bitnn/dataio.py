"""MNIST IDX parsing and the three single-bit input encodings."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .bitcore import pack_bits

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class WrongMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


class Encoding(str, Enum):
    BIPOLAR = "bipolar"
    BINARY01 = "binary01"
    FIXED2 = "fixed2"

    @property
    def code(self) -> int:
        return list(Encoding).index(self)

    @classmethod
    def from_code(cls, code: int) -> Encoding:
        try:
            return list(Encoding)[code]
        except IndexError:
            raise ValueError(f"unknown encoding code {code}") from None


@dataclass(frozen=True)
class RawDataset:
    images: np.ndarray  # (N, pixels) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str = "train"

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, n: int) -> RawDataset:
        return RawDataset(self.images[:n], self.labels[:n], self.split)


@dataclass(frozen=True)
class EncodedDataset:
    encoding: Encoding
    bit_words: np.ndarray  # (N, words) packed bipolar inputs
    real_inputs: np.ndarray  # (N, width) float64 inputs for phase-1
    labels: np.ndarray
    width: int

    def __len__(self) -> int:
        return self.labels.shape[0]

    def bits(self) -> np.ndarray:
        """Bipolar +/-1 view of the packed inputs, shape (N, width)."""
        from .bitcore import unpack_bipolar

        return unpack_bipolar(self.bit_words, self.width)


def _read(path: Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Read one IDX file of unsigned bytes into an array shaped by its header."""
    path = Path(path)
    data = _read(path)
    if len(data) < 4:
        raise TruncatedFileError(f"{path}: missing header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise WrongMagicError(f"{path}: wrong magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise TruncatedFileError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", data[4:header_len])
    size = int(np.prod(dims, dtype=np.int64))
    payload = data[header_len:]
    if len(payload) < size:
        raise TruncatedFileError(f"{path}: expected {size} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8, count=size).reshape(dims)


def load_idx(path_images, path_labels, split: str = "train") -> RawDataset:
    images = read_idx(path_images, IMAGES_MAGIC)
    labels = read_idx(path_labels, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return RawDataset(flat, labels.astype(np.int64), split)


_PREFIX = {"train": "train", "test": "t10k"}


def find_split_files(data_dir, split: str) -> tuple[Path, Path]:
    """Locate ``<prefix>-images?idx3-ubyte[.gz]`` and the matching labels file."""
    if split not in _PREFIX:
        raise ValueError(f"split must be one of {sorted(_PREFIX)}, got {split!r}")
    data_dir = Path(data_dir)
    prefix = _PREFIX[split]
    found = []
    for kind, rank in (("images", 3), ("labels", 1)):
        candidates = [
            data_dir / f"{prefix}-{kind}{sep}idx{rank}-ubyte{ext}"
            for sep in ("-", ".")
            for ext in ("", ".gz")
        ]
        hit = next((p for p in candidates if p.exists()), None)
        if hit is None:
            raise FileNotFoundError(f"no {split} {kind} file in {data_dir}")
        found.append(hit)
    return found[0], found[1]


def load_split(data_dir, split: str) -> RawDataset:
    images, labels = find_split_files(data_dir, split)
    return load_idx(images, labels, split)


def fixed2_codes(x: np.ndarray) -> np.ndarray:
    """Quantize intensities into 4 equal regions; boundaries belong to the upper region."""
    return np.minimum(np.floor(np.asarray(x) * 4.0), 3).astype(np.int64)


def encode_bits(images: np.ndarray, encoding: Encoding | str) -> np.ndarray:
    """Boolean "+1" planes for a batch of [0,1] intensities."""
    encoding = Encoding(encoding)
    if encoding is Encoding.BIPOLAR:
        return (2.0 * images - 1.0) >= 0.0
    if encoding is Encoding.BINARY01:
        # round half up
        return np.floor(images + 0.5) >= 1.0
    codes = fixed2_codes(images)
    hi = (codes >> 1) & 1
    lo = codes & 1
    out = np.empty(images.shape[:-1] + (2 * images.shape[-1],), dtype=bool)
    out[..., 0::2] = hi == 1
    out[..., 1::2] = lo == 1
    return out


def encode(raw: RawDataset, encoding: Encoding | str) -> EncodedDataset:
    encoding = Encoding(encoding)
    bits = encode_bits(raw.images, encoding)
    if encoding is Encoding.BIPOLAR:
        real = 2.0 * raw.images - 1.0
    elif encoding is Encoding.BINARY01:
        real = raw.images.copy()
    else:
        real = np.where(bits, 1.0, -1.0)
    return EncodedDataset(
        encoding=encoding,
        bit_words=pack_bits(bits),
        real_inputs=real,
        labels=raw.labels,
        width=bits.shape[1],
    )


def input_width(pixels: int, encoding: Encoding | str) -> int:
    return 2 * pixels if Encoding(encoding) is Encoding.FIXED2 else pixels

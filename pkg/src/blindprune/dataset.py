"""MNIST ingestion from IDX files, seeded subsets and batching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

# IDX type codes -> numpy dtype (big-endian where multi-byte)
_IDX_TYPES = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def parse_idx(data: bytes):
    """Decode an IDX byte stream.

    Returns ``(magic, dims, payload)`` where ``payload`` is an array shaped
    ``dims``. The magic is the big-endian u32 at offset 0 (2051 for MNIST
    images, 2049 for labels).
    """
    if len(data) < 4:
        raise FormatError("IDX stream shorter than its magic number")
    zero, type_code, ndim = data[0] | data[1], data[2], data[3]
    if zero != 0 or type_code not in _IDX_TYPES or ndim == 0:
        raise FormatError(f"bad IDX magic bytes {data[:4].hex()}")
    magic = struct.unpack(">I", data[:4])[0]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError("IDX header truncated")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    dtype = _IDX_TYPES[type_code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(data) - header != expected:
        raise FormatError(
            f"IDX payload is {len(data) - header} bytes, dims {dims} need {expected}"
        )
    payload = np.frombuffer(data, dtype=dtype, offset=header).reshape(dims)
    return magic, dims, payload


@dataclass
class MnistSplit:
    images: np.ndarray  # N x 784 float32 in [0, 1]
    labels: np.ndarray  # N int64 in [0, 10)

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise InputError("images and labels disagree on row count")

    def __len__(self):
        return self.labels.shape[0]

    def take(self, rows):
        return MnistSplit(self.images[rows], self.labels[rows])


@dataclass(frozen=True)
class SubsetSpec:
    fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise InputError(f"subset fraction must be in (0, 1], got {self.fraction}")


def _read(path: Path) -> bytes:
    if path.exists():
        return path.read_bytes()
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        with gzip.open(gz, "rb") as f:
            return f.read()
    # some mirrors use a dot before idx, e.g. train-images.idx3-ubyte
    alt = path.with_name(path.name.replace("-idx", ".idx"))
    for cand in (alt, alt.with_name(alt.name + ".gz")):
        if cand.exists():
            return _read(cand)
    raise InputError(f"missing MNIST file {path} (or {gz.name})")


def _load_split(directory: Path, images_name, labels_name):
    magic, dims, pixels = parse_idx(_read(directory / images_name))
    if magic != IMAGE_MAGIC or len(dims) != 3:
        raise FormatError(f"{images_name}: expected image magic {IMAGE_MAGIC}, got {magic}")
    magic, ldims, labels = parse_idx(_read(directory / labels_name))
    if magic != LABEL_MAGIC or len(ldims) != 1:
        raise FormatError(f"{labels_name}: expected label magic {LABEL_MAGIC}, got {magic}")
    if ldims[0] != dims[0]:
        raise FormatError(f"{images_name} has {dims[0]} images but {ldims[0]} labels")
    images = pixels.reshape(dims[0], dims[1] * dims[2]).astype(np.float32) / np.float32(255)
    return MnistSplit(images, labels.astype(np.int64))


def load_mnist(directory):
    """Load ``(train, test)`` from a directory of (optionally gzipped) IDX files."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"MNIST directory {directory} does not exist")
    train = _load_split(directory, FILES["train_images"], FILES["train_labels"])
    test = _load_split(directory, FILES["test_images"], FILES["test_labels"])
    return train, test


def subset_indices(n, spec: SubsetSpec):
    count = int(round(spec.fraction * n))
    if count == 0:
        raise InputError(f"fraction {spec.fraction} of {n} rows selects nothing")
    rng = np.random.default_rng(spec.seed)
    return rng.permutation(n)[:count]


def sample_subset(split: MnistSplit, spec: SubsetSpec) -> MnistSplit:
    """Uniform sample without replacement, shuffled, determined by the seed."""
    return split.take(subset_indices(len(split), spec))


def batches(split: MnistSplit, batch_size: int, shuffle_seed=None, rng=None):
    """Yield ``(images, labels)`` covering every row once.

    Pass ``shuffle_seed=None`` and no ``rng`` for sequential order.
    """
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    n = len(split)
    if rng is None and shuffle_seed is not None:
        rng = np.random.default_rng(shuffle_seed)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        rows = order[start:start + batch_size]
        yield split.images[rows], split.labels[rows]

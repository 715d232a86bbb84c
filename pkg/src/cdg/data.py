"""MNIST / Fashion-MNIST IDX ingestion, train/test splitting and synthetic tasks."""

from __future__ import annotations

import os
import struct
from collections import namedtuple

import numpy as np

from cdg.errors import InvalidArgument

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

Dataset = namedtuple("Dataset", ["images", "labels"])

FILES = {
    "mnist": {
        "t10k": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    },
}
FILES["fashion_mnist"] = FILES["mnist"]


class IdxFormatError(ValueError):
    pass


class WrongMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


def _read(path):
    with open(os.fspath(path), "rb") as fh:
        return fh.read()


def parse_idx_images(buf, path="<images>"):
    if len(buf) < 16:
        raise TruncatedFileError(f"{path}: truncated header ({len(buf)} bytes)")
    magic, n, rows, cols = struct.unpack_from(">IIII", buf)
    if magic != IMAGES_MAGIC:
        raise WrongMagicError(
            f"{path}: wrong magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"
        )
    if (rows, cols) != (28, 28):
        raise IdxFormatError(f"{path}: image dims {rows}x{cols}, expected 28x28")
    need = 16 + n * rows * cols
    if len(buf) < need:
        raise TruncatedFileError(f"{path}: truncated, {len(buf)} of {need} bytes")
    pix = np.frombuffer(buf, dtype=np.uint8, count=n * rows * cols, offset=16)
    return pix.reshape(n, 1, rows, cols).astype(np.float64) / 255.0


def parse_idx_labels(buf, path="<labels>"):
    if len(buf) < 8:
        raise TruncatedFileError(f"{path}: truncated header ({len(buf)} bytes)")
    magic, n = struct.unpack_from(">II", buf)
    if magic != LABELS_MAGIC:
        raise WrongMagicError(
            f"{path}: wrong magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"
        )
    if len(buf) < 8 + n:
        raise TruncatedFileError(f"{path}: truncated, {len(buf)} of {8 + n} bytes")
    labels = np.frombuffer(buf, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise IdxFormatError(f"{path}: label {labels.max()} out of range")
    return labels


def load_idx(images_path, labels_path):
    """Load an IDX image/label pair; pixels scaled to [0, 1] float64."""
    images = parse_idx_images(_read(images_path), images_path)
    labels = parse_idx_labels(_read(labels_path), labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels"
        )
    return Dataset(images, labels)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images (N, 28, 28) and labels (N,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8).reshape(-1, 28, 28)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, len(images), 28, 28))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def dataset_paths(data_dir, task, part):
    names = FILES[task][part]
    return tuple(os.path.join(data_dir, n) for n in names)


def subset(ds, idx):
    return Dataset(ds.images[idx], ds.labels[idx])


def inverted_split(dataset, train_n, seed):
    """Seeded selection of ``train_n`` training samples; the remainder is the test set."""
    n = len(dataset.labels)
    if not 0 < train_n <= n:
        raise InvalidArgument(f"train_n must lie in [1, {n}], got {train_n}")
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:train_n])
    test_idx = np.sort(perm[train_n:])
    return subset(dataset, train_idx), subset(dataset, test_idx)


def take(dataset, n, seed):
    """Seeded sample of ``n`` items (all of them if ``n`` is None or too large)."""
    total = len(dataset.labels)
    if n is None or n >= total:
        return dataset
    idx = np.sort(np.random.default_rng(seed).permutation(total)[:n])
    return subset(dataset, idx)


def batches(n, batch_size, rng):
    """Yield index arrays of one shuffled epoch; every sample appears exactly once."""
    if batch_size < 1:
        raise InvalidArgument(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


class SyntheticQuadratic:
    """L(X) = 0.5 * ||X - X*||^2 with a seeded random target X*."""

    def __init__(self, dims, seed):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 4 or min(dims) < 1:
            raise InvalidArgument(f"dims must be four positive integers, got {dims}")
        self.dims = dims
        self.target = np.random.default_rng(seed).standard_normal(dims)

    def loss(self, x):
        return 0.5 * float(np.sum((x - self.target) ** 2))

    def grad(self, x):
        return x - self.target


def synthetic_quadratic(dims, seed):
    return SyntheticQuadratic(dims, seed)

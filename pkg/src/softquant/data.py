"""Dataset generation and ingestion.

Two sources: seeded Gaussian-blob classification problems (the default
desk-scale task) and a simple binary labeled-image pair format, byte
layout documented in docs/FORMATS.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParseError

IMAGE_MAGIC = b"SQIM"
LABEL_MAGIC = b"SQLB"
FORMAT_VERSION = 1

# rng stream tags, combined with the run seed as (seed, tag)
STREAM_BLOB_TRAIN = 11
STREAM_BLOB_TEST = 12
STREAM_BLOB_FLIPS = 13


@dataclass
class Dataset:
    x: np.ndarray  # (n, dim) or (n, c, h, w) float64
    y: np.ndarray  # (n,) int64 labels
    num_classes: int

    def __len__(self) -> int:
        return len(self.y)


def _blob_split(means: np.ndarray, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    classes, dim = means.shape
    counts = np.full(classes, n // classes, dtype=np.int64)
    counts[: n % classes] += 1
    xs, ys = [], []
    for c in range(classes):
        xs.append(means[c] + rng.normal(0.0, 1.0, size=(counts[c], dim)))
        ys.append(np.full(counts[c], c, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(n)
    return x[perm], y[perm]


def make_blobs(
    classes: int,
    dim: int,
    n_train: int,
    n_test: int,
    separation: float,
    seed: int,
    label_noise: float = 0.0,
    image_side: int = 0,
) -> tuple[Dataset, Dataset]:
    """Seeded isotropic Gaussian blobs with deterministic splits.

    Class means are mutually orthogonal directions of norm ``separation``
    (pairwise distance separation * sqrt(2)), fixed by a constant
    rotation that spreads them across every input coordinate. Task
    geometry therefore does not vary with the seed; only the
    unit-variance samples do. Train and test samples come from their own
    streams, so splits are reproducible independently. ``label_noise``
    flips that fraction of train labels to a uniformly random other
    class, giving the training loss a nonzero floor; test labels stay
    clean. ``image_side`` > 0 reshapes inputs to single-channel square
    images for convolutional models.
    """
    if classes < 2 or dim < classes or n_train < classes or n_test < 1:
        raise ConfigurationError(
            f"bad blob spec: classes={classes}, dim={dim} (need dim >= classes), "
            f"n={n_train}/{n_test}"
        )
    if not (0.0 <= label_noise < 1.0):
        raise ConfigurationError(f"label_noise {label_noise} outside [0, 1)")
    basis = np.linalg.qr(
        np.random.default_rng(0xB10B5).normal(size=(dim, dim))
    )[0][:, :classes].T
    means = separation * basis
    train_x, train_y = _blob_split(means, n_train, np.random.default_rng([seed, STREAM_BLOB_TRAIN]))
    test_x, test_y = _blob_split(means, n_test, np.random.default_rng([seed, STREAM_BLOB_TEST]))
    if label_noise > 0.0:
        rng = np.random.default_rng([seed, STREAM_BLOB_FLIPS])
        n_flip = int(round(label_noise * n_train))
        flip = rng.choice(n_train, size=n_flip, replace=False)
        train_y[flip] = (train_y[flip] + rng.integers(1, classes, size=n_flip)) % classes
    if image_side:
        if image_side * image_side != dim:
            raise ConfigurationError(
                f"dim {dim} is not a {image_side}x{image_side} image"
            )
        train_x = train_x.reshape(-1, 1, image_side, image_side)
        test_x = test_x.reshape(-1, 1, image_side, image_side)
    return Dataset(train_x, train_y, classes), Dataset(test_x, test_y, classes)


def write_images(path, images: np.ndarray) -> None:
    """images: (n, c, h, w) uint8."""
    n, c, h, w = images.shape
    with open(path, "wb") as f:
        f.write(IMAGE_MAGIC)
        f.write(struct.pack("<IIIII", FORMAT_VERSION, n, c, h, w))
        f.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())


def write_labels(path, labels: np.ndarray, num_classes: int) -> None:
    with open(path, "wb") as f:
        f.write(LABEL_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, len(labels), num_classes))
        f.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def _read_exact(f, size: int, what: str) -> bytes:
    offset = f.tell()
    buf = f.read(size)
    if len(buf) != size:
        raise ParseError(f"truncated {what}: wanted {size} bytes, got {len(buf)}", offset)
    return buf


def read_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "image magic")
        if magic != IMAGE_MAGIC:
            raise ParseError(f"bad image magic {magic!r}", 0)
        version, n, c, h, w = struct.unpack("<IIIII", _read_exact(f, 20, "image header"))
        if version != FORMAT_VERSION:
            raise ParseError(f"unsupported image format version {version}", 4)
        raw = _read_exact(f, n * c * h * w, "pixel data")
        extra = f.read(1)
        if extra:
            raise ParseError("trailing bytes after pixel data", f.tell() - 1)
    return np.frombuffer(raw, dtype=np.uint8).reshape(n, c, h, w)


def read_labels(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "label magic")
        if magic != LABEL_MAGIC:
            raise ParseError(f"bad label magic {magic!r}", 0)
        version, n, num_classes = struct.unpack("<III", _read_exact(f, 12, "label header"))
        if version != FORMAT_VERSION:
            raise ParseError(f"unsupported label format version {version}", 4)
        if num_classes < 2 or num_classes > 256:
            raise ParseError(f"num_classes {num_classes} outside [2, 256]", 8)
        body = 16
        raw = _read_exact(f, n, "label data")
        labels = np.frombuffer(raw, dtype=np.uint8)
        bad = np.flatnonzero(labels >= num_classes)
        if bad.size:
            raise ParseError(
                f"label {labels[bad[0]]} >= num_classes {num_classes}", body + int(bad[0])
            )
        extra = f.read(1)
        if extra:
            raise ParseError("trailing bytes after label data", f.tell() - 1)
    return labels.astype(np.int64), int(num_classes)


def load_image_pair(image_path, label_path) -> Dataset:
    """Load an image/label file pair; pixels are scaled to [0, 1]."""
    images = read_images(image_path)
    labels, num_classes = read_labels(label_path)
    if len(images) != len(labels):
        raise ParseError(
            f"image count {len(images)} != label count {len(labels)}", 8
        )
    x = images.astype(np.float64) / 255.0
    return Dataset(x=x, y=labels, num_classes=num_classes)

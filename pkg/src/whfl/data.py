"""IDX (MNIST) ingestion."""

from __future__ import annotations

import gzip
import os
import struct
from pathlib import Path

import numpy as np

from .learning import Dataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DatasetError(ValueError):
    pass


def _read(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise DatasetError(f"{what}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise DatasetError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    body = np.frombuffer(raw, dtype=np.uint8, offset=head)
    if body.size != count:
        raise DatasetError(f"{what}: expected {count} bytes of data, found {body.size}")
    return body.reshape(dims)


def load_mnist(images_path, labels_path) -> Dataset:
    """Images scaled to [0, 1] and flattened; labels checked to lie in 0..9."""
    images = _parse_idx(_read(images_path), IMAGES_MAGIC, 3, str(images_path))
    labels = _parse_idx(_read(labels_path), LABELS_MAGIC, 1, str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"count mismatch: {images.shape[0]} images, {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise DatasetError(f"label {int(labels.max())} outside 0..9")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(flat, labels.astype(np.int64))


def find_mnist_file(directory, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = Path(directory) / name
        if p.exists():
            return p
    raise FileNotFoundError(
        f"MNIST file {stem} not found in {directory}; download the four IDX files "
        "(train/t10k images and labels) into that directory or set mnist_dir / WHFL_MNIST_DIR")


def load_mnist_dir(directory, split: str = "train") -> Dataset:
    img, lab = MNIST_FILES[split]
    return load_mnist(find_mnist_file(directory, img), find_mnist_file(directory, lab))


def default_mnist_dir() -> str:
    return os.environ.get("WHFL_MNIST_DIR", "data/mnist")


def write_idx_images(path, images: np.ndarray):
    """uint8 images (n, rows, cols) to an IDX3 file."""
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())

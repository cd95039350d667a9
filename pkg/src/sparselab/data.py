"""Dataset loaders: MNIST IDX files and CIFAR-10 binary batches.

Both loaders parse the published binary layouts directly and scale
pixels to [0, 1] by dividing by 255. Gzipped files are accepted
transparently. The dataset root comes from the SPARSELAB_DATA
environment variable (default ./data).
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073  # label byte + 3*32*32 pixels


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64 class indices
    split: str

    def __len__(self) -> int:
        return len(self.labels)


class DataBundle(NamedTuple):
    train: Dataset
    test: Dataset


def data_root() -> Path:
    return Path(os.environ.get("SPARSELAB_DATA", "data"))


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _read_idx_header(raw: bytes, path, expected_magic: int, dims: int):
    header = 4 * (1 + dims)
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header ({len(raw)} bytes)")
    fields = struct.unpack(f">{1 + dims}i", raw[:header])
    if fields[0] != expected_magic:
        raise FormatError(
            f"{path}: bad magic 0x{fields[0]:08x} at offset 0, expected 0x{expected_magic:08x}"
        )
    return fields[1:], header


def load_mnist_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Parse one MNIST split from its IDX image/label file pair."""
    raw = _read_bytes(images_path)
    (count, rows, cols), offset = _read_idx_header(raw, images_path, IMAGE_MAGIC, 3)
    expected = count * rows * cols
    if len(raw) - offset != expected:
        raise FormatError(
            f"{images_path}: expected {expected} pixel bytes after offset {offset}, "
            f"found {len(raw) - offset}"
        )
    images = np.frombuffer(raw, dtype=np.uint8, offset=offset).reshape(count, 1, rows, cols)
    images = images.astype(np.float32) / 255.0

    raw = _read_bytes(labels_path)
    (label_count,), offset = _read_idx_header(raw, labels_path, LABEL_MAGIC, 1)
    if label_count != count:
        raise FormatError(
            f"{labels_path}: {label_count} labels for {count} images in {images_path}"
        )
    if len(raw) - offset != label_count:
        raise FormatError(f"{labels_path}: truncated label data after offset {offset}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=offset).astype(np.int64)
    return Dataset(images=images, labels=labels, split=split)


def load_mnist(root=None) -> DataBundle:
    """Load both MNIST splits from a directory of standard-named IDX files."""
    root = Path(root) if root is not None else data_root() / "mnist"
    names = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    paths = {}
    for key, stem in names.items():
        plain, gz = root / stem, root / (stem + ".gz")
        if plain.exists():
            paths[key] = plain
        elif gz.exists():
            paths[key] = gz
        else:
            raise FileNotFoundError(f"missing MNIST file {stem}[.gz] under {root}")
    return DataBundle(
        train=load_mnist_idx(paths["train_images"], paths["train_labels"], "train"),
        test=load_mnist_idx(paths["test_images"], paths["test_labels"], "test"),
    )


def load_cifar10_binary(paths: Sequence, split: str = "train") -> Dataset:
    """Parse CIFAR-10 binary batch files (3073-byte records, channel-major)."""
    images, labels = [], []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD != 0:
            raise FormatError(
                f"{path}: size {len(raw)} is not a multiple of the {CIFAR_RECORD}-byte record"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0)
    return Dataset(images=np.concatenate(images), labels=np.concatenate(labels), split=split)


def load_cifar10(root=None) -> DataBundle:
    root = Path(root) if root is not None else data_root() / "cifar-10-batches-bin"
    train_paths = [root / f"data_batch_{i}.bin" for i in range(1, 6)]
    test_paths = [root / "test_batch.bin"]
    for p in train_paths + test_paths:
        if not p.exists():
            raise FileNotFoundError(f"missing CIFAR-10 batch file {p}")
    return DataBundle(
        train=load_cifar10_binary(train_paths, "train"),
        test=load_cifar10_binary(test_paths, "test"),
    )


def load_dataset(name: str, root=None) -> DataBundle:
    if name == "mnist":
        return load_mnist(root)
    if name == "cifar10":
        return load_cifar10(root)
    raise ValueError(f"unknown dataset {name!r}")

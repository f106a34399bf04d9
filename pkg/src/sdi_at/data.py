"""Small datasets: synthetic 2-D generators, MNIST IDX files, batching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (len(x),):
            raise ValueError(f"inputs {x.shape} and labels {y.shape} disagree")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("label out of range")
        if len(x) and (x.min() < 0.0 or x.max() > 1.0):
            raise ValueError("inputs must lie in [0, 1]")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray


def _check_sizes(num_classes, per_class):
    if num_classes < 2 or per_class < 1:
        raise ValueError("need num_classes >= 2 and per_class >= 1")


def gen_blobs(num_classes: int, per_class: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters centred on the vertices of a regular polygon in the unit square."""
    _check_sizes(num_classes, per_class)
    if spread <= 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    centers = 0.5 + 0.35 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = np.repeat(np.arange(num_classes), per_class)
    x = centers[labels] + spread * rng.standard_normal((len(labels), 2))
    return Dataset(np.clip(x, 0.0, 1.0), labels, num_classes)


def spiral_arm(arm: int, num_arms: int, per_class: int, noise: float, rng) -> np.ndarray:
    t = np.linspace(0.0, 1.0, per_class)
    radius = 0.1 + 0.9 * t
    angle = 2 * np.pi * arm / num_arms + 3 * np.pi * t
    if noise > 0:
        angle = angle + noise * rng.standard_normal(per_class)
    return 0.5 + 0.5 * radius[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)


def gen_spirals(num_classes: int, per_class: int, noise: float, seed: int) -> Dataset:
    """Interleaved Archimedean spirals, one arm per class, inside the unit square."""
    _check_sizes(num_classes, per_class)
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    x = np.concatenate([spiral_arm(c, num_classes, per_class, noise, rng) for c in range(num_classes)])
    labels = np.repeat(np.arange(num_classes), per_class)
    return Dataset(np.clip(x, 0.0, 1.0), labels, num_classes)


# -- IDX -------------------------------------------------------------------

def _read(path) -> bytes:
    raw = Path(path).read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def _header(buf: bytes, n: int, what: str):
    if len(buf) < 4 * n:
        raise IdxFormatError(f"{what} file truncated inside the header")
    return struct.unpack(f">{n}I", buf[: 4 * n])


def read_idx_images(path) -> np.ndarray:
    buf = _read(path)
    magic, = _header(buf, 1, "image")
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"image file magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    _, count, rows, cols = _header(buf, 4, "image")
    need = count * rows * cols
    if len(buf) - 16 < need:
        raise IdxFormatError(f"image payload has {len(buf) - 16} bytes, header implies {need}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=16).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    buf = _read(path)
    magic, = _header(buf, 1, "label")
    if magic != LABELS_MAGIC:
        raise IdxFormatError(f"label file magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    _, count = _header(buf, 2, "label")
    if len(buf) - 8 < count:
        raise IdxFormatError(f"label payload has {len(buf) - 8} bytes, header implies {count}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8)


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), 10)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images ``(n, rows, cols)`` and labels ``(n,)`` as IDX files."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise TypeError("IDX payloads must be uint8")
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", LABELS_MAGIC, len(labels)) + labels.tobytes())


# -- batching --------------------------------------------------------------

def permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Fisher-Yates shuffle of range(n) keyed on (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = permutation(len(dataset), seed, epoch)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield Batch(dataset.inputs[idx], dataset.labels[idx], idx)


def split(dataset: Dataset, n_train: int, seed: int) -> tuple[Dataset, Dataset]:
    order = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(np.sort(order[:n_train])), dataset.subset(np.sort(order[n_train:]))

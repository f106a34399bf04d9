"""The canonical desk benchmark: a real-MNIST subset and its training recipe.

The only MNIST copy available offline is the 5000-image sample (500 per digit)
that ships inside the ``mlxtend`` wheel.  It is split 4000/1000 and can be
exported to IDX files so the regular :func:`~sdi_at.data.load_idx` path reads it.
"""

from __future__ import annotations

import dataclasses
import gzip
import importlib.util
from pathlib import Path

import numpy as np

from .attacks import AttackConfig
from .data import Dataset, load_idx, split, write_idx
from .model import ModelSpec
from .training import TrainConfig

N_TRAIN = 4000
SPLIT_SEED = 0
SPEC = ModelSpec(784, (256, 128), 10)
TRAIN_ATTACK = AttackConfig(epsilon=0.1, step_size=0.01, steps=10)
EVAL_ATTACK = AttackConfig(epsilon=0.1, step_size=0.01, steps=20)
AT_CONFIG = TrainConfig(
    objective="at",
    beta=0.0,
    lr=0.05,
    momentum=0.9,
    weight_decay=5e-4,
    batch_size=128,
    epochs=15,
    lr_drops=((10, 10.0), (13, 10.0)),
    attack=TRAIN_ATTACK,
    seed=0,
)
AT_SDI_CONFIG = dataclasses.replace(AT_CONFIG, objective="at_sdi", beta=3.0)

FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


class BenchmarkDataMissing(RuntimeError):
    pass


def mnist5k_csv() -> Path:
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or spec.origin is None:
        raise BenchmarkDataMissing("the MNIST benchmark needs the mlxtend package: pip install mlxtend")
    path = Path(spec.origin).parent / "data" / "data" / "mnist_5k.csv.gz"
    if not path.is_file():
        raise BenchmarkDataMissing(f"expected MNIST sample at {path}")
    return path


def mnist5k_raw() -> tuple[np.ndarray, np.ndarray]:
    """uint8 images (5000, 28, 28) and labels."""
    with gzip.open(mnist5k_csv(), "rt") as fh:
        table = np.loadtxt(fh, delimiter=",")
    return table[:, :-1].astype(np.uint8).reshape(-1, 28, 28), table[:, -1].astype(np.uint8)


def export_idx(out_dir) -> list[Path]:
    """Write the 4000/1000 split as four IDX files; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = mnist5k_raw()
    order = np.random.default_rng(SPLIT_SEED).permutation(len(labels))
    tr, te = np.sort(order[:N_TRAIN]), np.sort(order[N_TRAIN:])
    paths = [out / f for f in FILES]
    write_idx(images[tr], labels[tr], paths[0], paths[1])
    write_idx(images[te], labels[te], paths[2], paths[3])
    return paths


def load(data_dir=None) -> tuple[Dataset, Dataset]:
    """Train and test sets, read from IDX files in ``data_dir`` if given."""
    if data_dir is not None:
        d = Path(data_dir)
        if not all((d / f).is_file() for f in FILES):
            export_idx(d)
        return load_idx(d / FILES[0], d / FILES[1]), load_idx(d / FILES[2], d / FILES[3])
    images, labels = mnist5k_raw()
    full = Dataset(images.reshape(len(images), -1) / 255.0, labels.astype(np.int64), 10)
    return split(full, N_TRAIN, SPLIT_SEED)

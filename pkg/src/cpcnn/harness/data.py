"""Datasets: CIFAR-10 binary batches and a synthetic grating set."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .. import seeding
from ..errors import IngestionError, ParameterError

DATA_ENV = "CPCNN_DATA"

# Per-channel statistics of the CIFAR-10 training set, applied after scaling to [0, 1].
CIFAR_MEAN = np.array([0.4914, 0.4822, 0.4465], dtype=np.float32)
CIFAR_STD = np.array([0.2470, 0.2435, 0.2616], dtype=np.float32)

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]


@dataclass
class Dataset:
    images: np.ndarray  # float32, N x 3 x H x W
    labels: np.ndarray  # int64, N

    def __len__(self):
        return len(self.labels)

    def subset(self, count: int | None) -> "Dataset":
        if count is None or count >= len(self):
            return self
        return Dataset(self.images[:count], self.labels[:count])


def default_data_root() -> Path | None:
    root = os.environ.get(DATA_ENV)
    return Path(root) if root else None


def _cifar_dir(root) -> Path:
    root = Path(root)
    nested = root / "cifar-10-batches-bin"
    return nested if nested.is_dir() else root


def read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Raw uint8 images (N, 3, 32, 32) and labels from one binary batch file."""
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise IngestionError(f"{path}: file not found") from None
    full = len(blob) // CIFAR_RECORD
    if len(blob) % CIFAR_RECORD:
        raise IngestionError(
            f"{path}: truncated record at byte offset {full * CIFAR_RECORD} "
            f"({len(blob) - full * CIFAR_RECORD} of {CIFAR_RECORD} bytes present)")
    if full == 0:
        raise IngestionError(f"{path}: file holds no records")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(full, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise IngestionError(f"{path}: label {labels[bad[0]]} out of range at byte offset {bad[0] * CIFAR_RECORD}")
    return raw[:, 1:].reshape(full, 3, 32, 32), labels


def normalize_cifar(raw: np.ndarray) -> np.ndarray:
    x = raw.astype(np.float32) / np.float32(255.0)
    return (x - CIFAR_MEAN[:, None, None]) / CIFAR_STD[:, None, None]


def load_cifar10(root, split: str = "train", limit: int | None = None) -> Dataset:
    """Decode the CIFAR-10 binary release found under ``root``."""
    if split not in ("train", "test"):
        raise ParameterError(f"split must be 'train' or 'test', got {split!r}")
    if root is None:
        raise IngestionError(f"no dataset root given and ${DATA_ENV} is unset")
    base = _cifar_dir(root)
    names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
    images, labels = [], []
    have = 0
    for name in names:
        raw, lab = read_cifar_file(base / name)
        images.append(raw)
        labels.append(lab)
        have += len(lab)
        if limit is not None and have >= limit:
            break
    ds = Dataset(normalize_cifar(np.concatenate(images)), np.concatenate(labels))
    return ds.subset(limit)


def synth_dataset(n_per_class: int, classes: int, size: int, seed: int, noise: float = 0.5) -> Dataset:
    """Oriented sinusoidal gratings; the spatial frequency encodes the class.

    Class ``c`` uses ``2 + c * 10 / (classes - 1)`` cycles per image width,
    with random orientation and phase per image plus Gaussian pixel noise.
    """
    if classes < 2:
        raise ParameterError("synthetic dataset needs at least two classes")
    if n_per_class < 1 or size < 4:
        raise ParameterError("n_per_class must be >= 1 and size >= 4")
    rng = seeding.stream(seed, 0x5E7)
    labels = np.repeat(np.arange(classes), n_per_class)
    labels = labels[rng.permutation(len(labels))]
    freqs = 2.0 + labels * (10.0 / (classes - 1))
    theta = rng.uniform(0, np.pi, size=len(labels))
    phase = rng.uniform(0, 2 * np.pi, size=len(labels))
    coords = np.arange(size) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    proj = xx[None] * np.cos(theta)[:, None, None] + yy[None] * np.sin(theta)[:, None, None]
    pattern = np.cos(2 * np.pi * freqs[:, None, None] * proj + phase[:, None, None])
    images = pattern[:, None] + noise * rng.standard_normal((len(labels), 3, size, size))
    return Dataset(images.astype(np.float32), labels.astype(np.int64))


def write_cifar_file(path, raw_images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (N, 3, 32, 32) in the CIFAR-10 binary record layout."""
    raw = np.concatenate([np.asarray(labels, np.uint8)[:, None],
                          np.asarray(raw_images, np.uint8).reshape(len(labels), -1)], axis=1)
    Path(path).write_bytes(raw.tobytes())


def resize_batch(images: np.ndarray, size: int) -> np.ndarray:
    h = images.shape[-1]
    if h == size:
        return images
    if size % h == 0:
        f = size // h
        return images.repeat(f, axis=2).repeat(f, axis=3)
    return ndimage.zoom(images, (1, 1, size / h, size / h), order=1).astype(images.dtype)


def flip_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    flip = rng.random(len(images)) < 0.5
    out = images.copy()
    out[flip] = out[flip, :, :, ::-1]
    return out

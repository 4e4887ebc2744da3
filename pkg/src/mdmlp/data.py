"""CIFAR binary readers, a synthetic separable dataset, augmentation and batching."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError

CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE
CIFAR10_RECORD = 1 + CIFAR_PIXELS
CIFAR100_RECORD = 2 + CIFAR_PIXELS
CIFAR10_BATCH_RECORDS = 10_000
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILE = "test_batch.bin"
CIFAR100_SPLITS = (("train.bin", 50_000, "train"), ("test.bin", 10_000, "test"))

JITTER_STRENGTH = 0.4
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class LabeledImage:
    pixels: np.ndarray  # C x H x W in [0, 1]
    label: int


@dataclass
class DatasetSplit:
    images: np.ndarray  # N x C x H x W, float32 in [0, 1]
    labels: np.ndarray  # N, int64
    num_classes: int
    name: str = "train"

    def __post_init__(self):
        if len(self.images) == 0:
            raise DataError(f"split {self.name!r} is empty")
        if len(self.images) != len(self.labels):
            raise DataError(f"split {self.name!r}: {len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> LabeledImage:
        return LabeledImage(self.images[i], int(self.labels[i]))

    def subset(self, n: int) -> "DatasetSplit":
        return DatasetSplit(self.images[:n], self.labels[:n], self.num_classes, self.name)


# -- CIFAR -------------------------------------------------------------------

def _read_records(path: Path, record: int, expected_records: int | None, label_bytes: int, max_label: int):
    if not path.is_file():
        raise DataError(f"missing dataset file {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if expected_records is not None and raw.size != expected_records * record:
        raise DataError(f"{path}: size {raw.size} bytes, expected {expected_records * record}")
    if raw.size == 0 or raw.size % record:
        raise DataError(f"{path}: size {raw.size} bytes is not a multiple of the {record}-byte record")
    rows = raw.reshape(-1, record)
    labels = rows[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(labels > max_label)
    if bad.size:
        i = int(bad[0])
        raise DataError(f"{path}: label {labels[i]} > {max_label} in record {i} (byte offset {i * record})")
    images = rows[:, label_bytes:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    return images, labels, rows[:, :label_bytes]


def decode_pixels(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(255.0)


def encode_record(pixels: np.ndarray, label: int) -> bytes:
    """Inverse of the CIFAR-10 record parser: 1 label byte + 3072 channel-planar pixels."""
    px = np.floor(np.asarray(pixels, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)
    if px.shape != (3, CIFAR_SIDE, CIFAR_SIDE):
        raise ConfigError(f"CIFAR record needs 3x32x32 pixels, got {px.shape}")
    return bytes([int(label)]) + px.tobytes()


def _cifar_dir(root: str | os.PathLike, marker: str) -> Path:
    root = Path(root)
    for cand in (root, root / "cifar-10-batches-bin", root / "cifar-100-binary"):
        if (cand / marker).exists():
            return cand
    return root


def load_cifar10_file(path: str | os.PathLike, name: str = "test") -> DatasetSplit:
    raw, labels, _ = _read_records(Path(path), CIFAR10_RECORD, CIFAR10_BATCH_RECORDS, 1, 9)
    return DatasetSplit(decode_pixels(raw), labels, 10, name)


def load_cifar10(root: str | os.PathLike) -> tuple[DatasetSplit, DatasetSplit]:
    """Read the binary CIFAR-10 release (data_batch_1..5.bin, test_batch.bin)."""
    d = _cifar_dir(root, CIFAR10_TEST_FILE)
    parts = [load_cifar10_file(d / f, "train") for f in CIFAR10_TRAIN_FILES]
    train = DatasetSplit(
        np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]), 10, "train"
    )
    test = load_cifar10_file(d / CIFAR10_TEST_FILE, "test")
    return train, test


def load_cifar100(root: str | os.PathLike, label: str = "fine") -> tuple[DatasetSplit, DatasetSplit]:
    """Binary CIFAR-100 (train.bin, test.bin): coarse label byte, fine label byte, pixels."""
    if label not in ("fine", "coarse"):
        raise ConfigError(f"label must be 'fine' or 'coarse', got {label!r}")
    d = _cifar_dir(root, "test.bin")
    n_classes = 100 if label == "fine" else 20
    out = []
    for fname, n, split in CIFAR100_SPLITS:
        raw, fine, header = _read_records(d / fname, CIFAR100_RECORD, n, 2, 99)
        labels = fine if label == "fine" else header[:, 0].astype(np.int64)
        if labels.max() >= n_classes:
            raise DataError(f"{d / fname}: coarse label out of range")
        out.append(DatasetSplit(decode_pixels(raw), labels, n_classes, split))
    return out[0], out[1]


# -- synthetic ---------------------------------------------------------------

def synthetic_dataset(
    seed: int,
    n: int,
    num_classes: int,
    height: int,
    width: int,
    channels: int = 3,
    square: int = 4,
    name: str = "train",
) -> DatasetSplit:
    """Seeded noise in [0, 0.5) with a bright ``square`` x ``square`` block whose
    position encodes the class. Labels are assigned round-robin."""
    if n < num_classes:
        raise ConfigError(f"need n >= num_classes, got n={n}, num_classes={num_classes}")
    cols = max(1, (width - square) // square + 1)
    rows = max(1, (height - square) // square + 1)
    if rows * cols < num_classes:
        raise ConfigError(f"{height}x{width} image fits only {rows * cols} distinct {square}px squares")
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 0.5, size=(n, channels, height, width)).astype(np.float32)
    labels = np.arange(n, dtype=np.int64) % num_classes
    for k in range(num_classes):
        r, c = divmod(k, cols)
        y0, x0 = r * square, c * square
        images[labels == k, :, y0:y0 + square, x0:x0 + square] = 1.0
    return DatasetSplit(images, labels, num_classes, name)


# -- augmentation ------------------------------------------------------------

def hflip(pixels: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(pixels[..., ::-1])


def _luma(pixels: np.ndarray) -> np.ndarray:
    if pixels.shape[0] == 3:
        return np.tensordot(LUMA.astype(pixels.dtype), pixels, axes=(0, 0))
    return pixels.mean(axis=0)


def color_jitter(pixels: np.ndarray, brightness: float, contrast: float, saturation: float) -> np.ndarray:
    """Scale brightness, then contrast about the mean luma, then saturation about
    per-pixel luma. Clamped to [0, 1] after each stage."""
    dt = pixels.dtype.type
    x = np.clip(pixels * dt(brightness), 0.0, 1.0)
    m = dt(_luma(x).mean())
    x = np.clip((x - m) * dt(contrast) + m, 0.0, 1.0)
    lum = _luma(x)[None]
    x = np.clip((x - lum) * dt(saturation) + lum, 0.0, 1.0)
    return x.astype(pixels.dtype, copy=False)


def augment(img: LabeledImage, rng: np.random.Generator, flags=("hflip", "color_jitter")) -> LabeledImage:
    flags = set(flags)
    unknown = flags - {"hflip", "color_jitter"}
    if unknown:
        raise ConfigError(f"unknown augmentation flags {sorted(unknown)}")
    x = img.pixels
    if "hflip" in flags and rng.random() < 0.5:
        x = hflip(x)
    if "color_jitter" in flags:
        lo, hi = 1.0 - JITTER_STRENGTH, 1.0 + JITTER_STRENGTH
        b, c, s = rng.uniform(lo, hi, size=3)
        x = color_jitter(x, b, c, s)
    return LabeledImage(x, img.label)


# -- batching ----------------------------------------------------------------

def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0]).permutation(n)


def batches(
    split: DatasetSplit,
    batch_size: int,
    seed: int,
    epoch: int,
    shuffle: bool = True,
    flags=(),
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, labels)`` minibatches; the last partial batch is kept.

    Order and augmentation are pure functions of ``(seed, epoch)``: image ``i``
    of the epoch draws from its own stream keyed by ``(seed, epoch, 1, i)``.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(split)
    order = epoch_order(n, seed, epoch) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        x = split.images[idx]
        if flags:
            x = x.copy()
            for j, i in enumerate(idx):
                rng = np.random.default_rng([seed, epoch, 1, int(i)])
                x[j] = augment(LabeledImage(x[j], int(split.labels[i])), rng, flags).pixels
        yield x, split.labels[idx]

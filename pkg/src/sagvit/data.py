"""Dataset ingestion: seeded synthetic gratings and the CIFAR-10 binary
batch format."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .backbone import ConfigError, Image
from .tensor import Tensor

CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixels
CIFAR_BATCH_BYTES = 10000 * CIFAR_RECORD  # 30730000


class FormatError(ValueError):
    """Malformed dataset file."""


def gen_synthetic(classes: int = 2, per_class: int = 32, size: int = 32,
                  seed: int = 0, channels: int = 3,
                  noise: float = 0.08) -> list[Image]:
    """Class-specific oriented sinusoid gratings plus seeded noise.

    Class c gets a distinct spatial frequency and orientation, so a linear
    probe on raw pixels separates the default 2-class set.
    """
    if size < 4:
        raise ConfigError(f"image size {size} too small")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    images = []
    for c in range(classes):
        freq = 2.0 * np.pi * (c + 1) / 8.0
        theta = np.pi * c / max(classes, 2)
        proj = np.cos(theta) * xx + np.sin(theta) * yy
        for _ in range(per_class):
            # mild phase/amplitude jitter keeps the classes linearly separable
            phase = rng.uniform(-np.pi / 6, np.pi / 6)
            amp = rng.uniform(0.35, 0.5)
            img = 0.5 + amp * np.sin(freq * proj + phase)
            img = img + rng.normal(0.0, noise, (size, size))
            img = np.clip(img, 0.0, 1.0)
            data = np.broadcast_to(img, (channels, size, size)).copy()
            images.append(Image(data=Tensor(data), label=c))
    order = rng.permutation(len(images))
    return [images[i] for i in order]


def _parse_batch(blob: bytes, path) -> list[Image]:
    if len(blob) != CIFAR_BATCH_BYTES:
        raise FormatError(
            f"{path}: expected {CIFAR_BATCH_BYTES} bytes per CIFAR-10 batch, "
            f"got {len(blob)}")
    arr = np.frombuffer(blob, dtype=np.uint8).reshape(10000, CIFAR_RECORD)
    labels = arr[:, 0]
    if labels.max() > 9:
        raise FormatError(f"{path}: label byte out of range 0-9")
    pixels = arr[:, 1:].reshape(10000, 3, 32, 32).astype(np.float64) / 255.0
    return [Image(data=Tensor(pixels[i]), label=int(labels[i])) for i in range(10000)]


def load_cifar10(directory, split: str = "train") -> list[Image]:
    """Read CIFAR-10 binary batches: data_batch_1..5.bin or test_batch.bin."""
    directory = Path(directory)
    names = ([f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train"
             else ["test_batch.bin"])
    images: list[Image] = []
    for name in names:
        path = directory / name
        if not path.exists():
            raise FormatError(f"missing CIFAR-10 batch file: {path}")
        images.extend(_parse_batch(path.read_bytes(), path))
    return images

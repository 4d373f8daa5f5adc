"""CIFAR-10 binary reader, augmentation, and a synthetic separable task."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)
CIFAR10_MEAN = np.array([0.4914, 0.4822, 0.4465])
CIFAR10_STD = np.array([0.2470, 0.2435, 0.2616])
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C), normalized
    labels: np.ndarray  # (N,) int64

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int | None) -> Dataset:
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n])


def read_cifar10_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse one binary batch file into uint8 images ``(N, 32, 32, 3)`` and labels."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES:
        raise FormatError(
            f"{path}: {raw.size} bytes is not a positive multiple of the "
            f"{RECORD_BYTES}-byte record length"
        )
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, *IMAGE_SHAPE).transpose(0, 2, 3, 1)
    return images, labels


def normalize(images_uint8: np.ndarray) -> np.ndarray:
    return (images_uint8.astype(np.float64) / 255.0 - CIFAR10_MEAN) / CIFAR10_STD


def load_cifar10(path: str, split: str = "train", subset: int | None = None) -> Dataset:
    """Load the binary version of CIFAR-10.

    ``path`` is either one batch file or the ``cifar-10-batches-bin``
    directory, in which case ``split`` picks the train or test files.
    """
    if os.path.isdir(path):
        names = TRAIN_FILES if split == "train" else TEST_FILES
        files = [os.path.join(path, n) for n in names]
        missing = [f for f in files if not os.path.exists(f)]
        if missing:
            raise FileNotFoundError(f"missing CIFAR-10 files: {', '.join(missing)}")
    else:
        files = [path]
    images, labels = [], []
    remaining = subset
    for f in files:
        im, lab = read_cifar10_file(f)
        if remaining is not None:
            im, lab = im[:remaining], lab[:remaining]
            remaining -= len(lab)
        images.append(im)
        labels.append(lab)
        if remaining is not None and remaining <= 0:
            break
    return Dataset(normalize(np.concatenate(images)), np.concatenate(labels))


def find_cifar10(path: str | None = None) -> str | None:
    """Locate a ``cifar-10-batches-bin`` directory, or return None."""
    candidates = [path, os.environ.get("CIFAR10_DIR"), "data/cifar-10-batches-bin",
                  os.path.expanduser("~/data/cifar-10-batches-bin")]
    for cand in candidates:
        if cand and os.path.exists(os.path.join(cand, "test_batch.bin")):
            return cand
    return None


def augment(image: np.ndarray, rng: np.random.Generator, pad: int = 4,
            shift: tuple[int, int] | None = None, flip: bool | None = None) -> np.ndarray:
    """Zero-pad by ``pad``, crop back at a random shift, mirror with probability 1/2.

    ``shift`` (in ``[-pad, pad]`` per axis) and ``flip`` override the random
    draws; a zero shift without flip returns the image unchanged.
    """
    h, w = image.shape[:2]
    if shift is None:
        dy, dx = rng.integers(-pad, pad + 1, size=2)
    else:
        dy, dx = shift
    if flip is None:
        flip = bool(rng.random() < 0.5)
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
    out = padded[pad + dy:pad + dy + h, pad + dx:pad + dx + w]
    return out[:, ::-1] if flip else out


def augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(im, rng) for im in images])


def make_blobs(n: int, rng: np.random.Generator, size: int = 8, channels: int = 3,
               margin: float = 0.3, noise: float = 1.0) -> Dataset:
    """Two classes whose pixels sit in opposite half-balls after embedding.

    Every pixel of a class-``k`` image is ``(+/-) margin * d + noise``, with a
    fixed unit direction ``d`` and Gaussian noise, read as a tangent vector at
    the origin.
    """
    labels = rng.integers(0, 2, size=n)
    direction = np.ones(channels) / np.sqrt(channels)
    sign = np.where(labels == 1, 1.0, -1.0)[:, None, None, None]
    images = sign * margin * direction + noise * rng.normal(size=(n, size, size, channels))
    return Dataset(images, labels.astype(np.int64))

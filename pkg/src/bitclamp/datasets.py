"""Bit-exact dataset ingestion: MNIST IDX, CIFAR-10 binary, synthetic blobs.

Both real-dataset parsers read the canonical binary formats (transparently
gunzipping when the file starts with the gzip magic) and have matching
serializers so fixtures can be round-tripped byte-exactly in tests.
Normalization uses the standard published per-channel constants.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MNIST_MEAN, MNIST_STD = 0.1307, 0.3081
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801
_CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


class DataFormatError(ValueError):
    """Raised when a dataset file does not match its declared format."""


@dataclass
class LabeledDataset:
    """Normalized images (N, C, H, W) with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str
    n_classes: int
    augment: bool = False

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataFormatError(f"image count {self.images.shape[0]} does not "
                                  f"match label count {self.labels.shape[0]}")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.n_classes):
            raise DataFormatError("labels outside [0, n_classes)")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, limit: int) -> "LabeledDataset":
        """First `limit` samples (data files are already shuffled)."""
        if limit >= len(self):
            return self
        return LabeledDataset(self.images[:limit], self.labels[:limit],
                              self.split, self.n_classes, self.augment)


def _read_binary(path) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
        rest = f.read()
    raw = head + rest
    if head == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _idx_header(buf: bytes, expected_magic: int, n_dims: int, path) -> tuple:
    need = 4 * (1 + n_dims)
    if len(buf) < need:
        raise DataFormatError(f"{path}: truncated header, {len(buf)} bytes "
                              f"(need {need}) at offset 0")
    magic = struct.unpack_from(">I", buf, 0)[0]
    if magic != expected_magic:
        raise DataFormatError(f"{path}: wrong magic 0x{magic:08x} at offset 0 "
                              f"(expected 0x{expected_magic:08x})")
    return struct.unpack_from(f">{n_dims}I", buf, 4)


def load_mnist_idx(images_path, labels_path, split: str = "train",
                   normalize: bool = True) -> LabeledDataset:
    """Parse an IDX image/label file pair into a normalized dataset.

    Images: big-endian magic 0x00000803, then N, H, W as big-endian u32,
    then row-major pixel bytes. Labels: magic 0x00000801, N, label bytes.
    Pixels are scaled to [0, 1] and normalized to the standard MNIST
    mean/std unless normalize=False.
    """
    img_buf = _read_binary(images_path)
    n, h, w = _idx_header(img_buf, _IDX_IMAGES_MAGIC, 3, images_path)
    expected = 16 + n * h * w
    if len(img_buf) != expected:
        raise DataFormatError(f"{images_path}: payload length {len(img_buf) - 16} "
                              f"at offset 16 (expected {n * h * w})")
    pixels = np.frombuffer(img_buf, dtype=np.uint8, offset=16).reshape(n, 1, h, w)

    lbl_buf = _read_binary(labels_path)
    (n_labels,) = _idx_header(lbl_buf, _IDX_LABELS_MAGIC, 1, labels_path)
    if len(lbl_buf) != 8 + n_labels:
        raise DataFormatError(f"{labels_path}: payload length {len(lbl_buf) - 8} "
                              f"at offset 8 (expected {n_labels})")
    if n_labels != n:
        raise DataFormatError(f"{labels_path}: {n_labels} labels for {n} images")
    labels = np.frombuffer(lbl_buf, dtype=np.uint8, offset=8).astype(np.int64)

    images = pixels.astype(np.float32) / 255.0
    if normalize:
        images = (images - MNIST_MEAN) / MNIST_STD
    return LabeledDataset(images, labels, split, n_classes=10)


def save_mnist_idx(images_u8: np.ndarray, labels: np.ndarray,
                   images_path, labels_path) -> None:
    """Serialize raw uint8 images (N, H, W) and labels back to IDX bytes."""
    n, h, w = images_u8.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", _IDX_IMAGES_MAGIC, n, h, w))
        f.write(np.ascontiguousarray(images_u8, dtype=np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", _IDX_LABELS_MAGIC, n))
        f.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def load_cifar10_bin(paths, split: str = "train", normalize: bool = True,
                     augment: bool | None = None) -> LabeledDataset:
    """Parse CIFAR-10 .bin batches (3073-byte records, channel-planar RGB).

    Random-crop/flip augmentation is flagged on for the train split by
    default and applied per batch by the training loop, never here.
    """
    chunks = []
    for path in [paths] if isinstance(paths, (str, Path)) else list(paths):
        buf = _read_binary(path)
        if len(buf) == 0 or len(buf) % _CIFAR_RECORD:
            raise DataFormatError(f"{path}: size {len(buf)} is not a positive "
                                  f"multiple of {_CIFAR_RECORD}")
        chunks.append(np.frombuffer(buf, dtype=np.uint8).reshape(-1, _CIFAR_RECORD))
    records = np.concatenate(chunks)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    if normalize:
        mean = np.asarray(CIFAR10_MEAN, dtype=np.float32).reshape(1, 3, 1, 1)
        std = np.asarray(CIFAR10_STD, dtype=np.float32).reshape(1, 3, 1, 1)
        images = (images - mean) / std
    if augment is None:
        augment = split == "train"
    return LabeledDataset(images, labels, split, n_classes=10, augment=augment)


def save_cifar10_bin(images_u8: np.ndarray, labels: np.ndarray, path) -> None:
    """Serialize uint8 images (N, 3, 32, 32) and labels to one .bin file."""
    n = images_u8.shape[0]
    records = np.empty((n, _CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images_u8.reshape(n, -1)
    with open(path, "wb") as f:
        f.write(records.tobytes())


def random_crop_flip(images: np.ndarray, rng: np.random.Generator,
                     pad: int = 4) -> np.ndarray:
    """Seeded per-image random crop (after `pad` zero-padding) and h-flip."""
    n, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    tops = rng.integers(0, 2 * pad + 1, size=n)
    lefts = rng.integers(0, 2 * pad + 1, size=n)
    flips = rng.random(n) < 0.5
    out = np.empty_like(images)
    for i in range(n):
        crop = padded[i, :, tops[i] : tops[i] + h, lefts[i] : lefts[i] + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def synthetic_blobs(n: int, classes: int, seed: int, dim: int = 16,
                    separation: float = 10.0, split: str = "train") -> LabeledDataset:
    """Seeded Gaussian clusters for fast engine sanity runs.

    Class k is centered at +-separation along coordinate k (alternating
    sign), unit variance, shaped (N, 1, 1, dim) so both MLP and conv-style
    front ends accept it.
    """
    if n <= 0 or classes <= 0:
        raise ValueError(f"n and classes must be positive, got {n}, {classes}")
    if classes > dim:
        raise ValueError(f"need dim >= classes, got dim={dim}, classes={classes}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=n)
    centers = np.zeros((classes, dim), dtype=np.float64)
    for k in range(classes):
        centers[k, k] = separation if k % 2 == 0 else -separation
    features = centers[labels] + rng.standard_normal((n, dim))
    images = features.astype(np.float32).reshape(n, 1, 1, dim)
    return LabeledDataset(images, labels.astype(np.int64), split,
                          n_classes=classes)

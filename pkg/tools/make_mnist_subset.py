#!/usr/bin/env python3
"""Build the desk-scale MNIST subset shipped under data/mnist.

Source: the npm package ``mnist`` (https://www.npmjs.com/package/mnist),
which bundles 1001 images per digit class from the MNIST training set as
JSON arrays of pixel values divided by 255 and rounded to three decimals.
``round(v * 255)`` restores the original bytes exactly (rounding error is
at most 0.1275 of a grey level).

Usage:
    npm install mnist
    python tools/make_mnist_subset.py node_modules/mnist data/mnist

Writes gzipped IDX files (train: 8000 images, val: 2010 images) with a
seeded shuffle so the split is reproducible. mtime=0 in the gzip headers
keeps the output byte-stable.
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

TRAIN_COUNT = 8000
SHUFFLE_SEED = 20240817


def write_idx_images(path: Path, images: np.ndarray) -> None:
    n, h, w = images.shape
    header = struct.pack(">IIII", 0x00000803, n, h, w)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header)
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    header = struct.pack(">II", 0x00000801, labels.shape[0])
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header)
        f.write(labels.astype(np.uint8).tobytes())


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__)
        return 2
    pkg_dir = Path(sys.argv[1])
    out_dir = Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)

    images = []
    labels = []
    for digit in range(10):
        with open(pkg_dir / "src" / "digits" / f"{digit}.json") as f:
            flat = np.asarray(json.load(f)["data"], dtype=np.float64)
        per_digit = flat.reshape(-1, 28, 28)
        images.append(np.round(per_digit * 255).astype(np.uint8))
        labels.append(np.full(per_digit.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.default_rng(SHUFFLE_SEED).permutation(images.shape[0])
    images, labels = images[order], labels[order]

    write_idx_images(out_dir / "train-images-idx3-ubyte.gz", images[:TRAIN_COUNT])
    write_idx_labels(out_dir / "train-labels-idx1-ubyte.gz", labels[:TRAIN_COUNT])
    write_idx_images(out_dir / "val-images-idx3-ubyte.gz", images[TRAIN_COUNT:])
    write_idx_labels(out_dir / "val-labels-idx1-ubyte.gz", labels[TRAIN_COUNT:])
    print(f"wrote {TRAIN_COUNT} train / {images.shape[0] - TRAIN_COUNT} val images to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

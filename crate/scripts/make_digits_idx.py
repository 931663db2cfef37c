#!/usr/bin/env python3
"""Regenerate data/digits/: the scikit-learn 8x8 handwritten digits corpus
re-packed as IDX files (same container format as MNIST).

Every 5th sample goes to the test split, the rest to train. Pixel values
(0..16) are rescaled to 0..255 bytes.

Requires scikit-learn and numpy. The committed files are the output of this
script; rerunning it is only needed if the packing scheme changes.
"""

import os
import struct

import numpy as np
from sklearn.datasets import load_digits


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    out_dir = os.path.join(os.path.dirname(__file__), "..", "data", "digits")
    os.makedirs(out_dir, exist_ok=True)

    bunch = load_digits()
    images = np.round(bunch.images * 255.0 / 16.0).astype(np.uint8)
    labels = bunch.target.astype(np.uint8)

    idx = np.arange(len(labels))
    test_mask = idx % 5 == 4

    write_idx_images(os.path.join(out_dir, "train-images-idx3-ubyte"), images[~test_mask])
    write_idx_labels(os.path.join(out_dir, "train-labels-idx1-ubyte"), labels[~test_mask])
    write_idx_images(os.path.join(out_dir, "t10k-images-idx3-ubyte"), images[test_mask])
    write_idx_labels(os.path.join(out_dir, "t10k-labels-idx1-ubyte"), labels[test_mask])

    print(f"train: {int((~test_mask).sum())} images, test: {int(test_mask.sum())} images")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Build the desk-scale datasets under data/.

Sources (fetched through package managers, no direct downloads):
  * UCI Digits: the copy bundled with scikit-learn (sklearn/datasets/data/digits.csv.gz).
  * MNIST: the original IDX files shipped in the npm `mnist-data` package
    (`npm pack mnist-data && tar xzf mnist-data-*.tgz`, then pass `package/data`).
    A seeded 10,000-image subset of the training file and a 2,000-image subset
    of the test file are written back out as gzipped IDX.

usage: make_data.py <mnist-idx-dir> [out-dir]
"""
import gzip
import os
import struct
import sys

import numpy as np


def read_idx(path):
    with open(path, "rb") as f:
        raw = f.read()
    magic, n = struct.unpack(">II", raw[:8])
    if magic == 0x00000803:
        rows, cols = struct.unpack(">II", raw[8:16])
        return np.frombuffer(raw[16:], dtype=np.uint8).reshape(n, rows, cols)
    assert magic == 0x00000801
    return np.frombuffer(raw[8:], dtype=np.uint8)


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def main():
    idx_dir = sys.argv[1]
    out = sys.argv[2] if len(sys.argv) > 2 else os.path.join(os.path.dirname(__file__), "..", "data")
    os.makedirs(out, exist_ok=True)

    import sklearn

    digits_src = os.path.join(os.path.dirname(sklearn.__file__), "datasets", "data", "digits.csv.gz")
    digits = np.loadtxt(gzip.open(digits_src, "rt"), delimiter=",")
    with open(os.path.join(out, "digits.csv"), "w") as f:
        f.write(",".join([f"px{i}" for i in range(64)] + ["label"]) + "\n")
        for row in digits.astype(int):
            f.write(",".join(str(v) for v in row) + "\n")

    rng = np.random.default_rng(0)
    for split, prefix, count in (("train", "train", 10_000), ("test", "t10k", 2_000)):
        images = read_idx(os.path.join(idx_dir, f"{prefix}-images-idx3-ubyte"))
        labels = read_idx(os.path.join(idx_dir, f"{prefix}-labels-idx1-ubyte"))
        pick = np.sort(rng.choice(len(labels), count, replace=False))
        write_idx_images(os.path.join(out, f"mnist-{split}-images-idx3-ubyte.gz"), images[pick])
        write_idx_labels(os.path.join(out, f"mnist-{split}-labels-idx1-ubyte.gz"), labels[pick])
        print(split, images[pick].shape, np.bincount(labels[pick]))
    print("digits", digits.shape)


if __name__ == "__main__":
    main()

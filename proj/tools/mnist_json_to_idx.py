#!/usr/bin/env python3
"""Convert the digit JSON files of the `mnist` npm package into IDX files.

The package ships 10,000 MNIST digits as per-class JSON arrays of
intensities divided by 255 and rounded to three decimals. This script
restores the bytes, shuffles with a fixed seed and writes a train/test split
in the standard big-endian IDX layout.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/mnist_json_to_idx.py package/src/digits data/mnist
"""

import argparse
import json
import struct
from pathlib import Path

import numpy as np


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--n-test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        data = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        arr = np.rint(np.asarray(data, dtype=np.float64) * 255.0).clip(0, 255)
        arr = arr.reshape(-1, 784)
        images.append(arr)
        labels.append(np.full(len(arr), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]
    n_train = len(labels) - args.n_test

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_images(args.out_dir / "train-images-idx3-ubyte", images[:n_train])
    write_labels(args.out_dir / "train-labels-idx1-ubyte", labels[:n_train])
    write_images(args.out_dir / "t10k-images-idx3-ubyte", images[n_train:])
    write_labels(args.out_dir / "t10k-labels-idx1-ubyte", labels[n_train:])
    print(f"wrote {n_train} train and {args.n_test} test digits to {args.out_dir}")


if __name__ == "__main__":
    main()

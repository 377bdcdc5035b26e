#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert the npm `mnist` and `fashion-mnist` JSON bundles into gzipped IDX files.

Usage:
    npm pack mnist fashion-mnist
    mkdir digits fashion
    tar xzf mnist-1.1.0.tgz -C digits && tar xzf fashion-mnist-1.1.0.tgz -C fashion
    python3 tools/prepare_data.py --digits digits/package --fashion fashion/package --out data
"""
import argparse
import gzip
import json
import os
import struct

import numpy as np


def write_idx_images(path, images):
    n, h, w = images.shape
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_digits(root):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(root, "src", "digits", f"{digit}.json")) as f:
            flat = np.array(json.load(f)["data"], dtype=np.float64)
        px = np.clip(np.round(flat * 255.0), 0, 255).reshape(-1, 28, 28)
        images.append(px)
        labels += [digit] * len(px)
    return np.concatenate(images), np.array(labels)


def load_fashion(root, per_class):
    images, labels = [], []
    for cls in range(10):
        with open(os.path.join(root, "src", "clothes", f"{cls}.json")) as f:
            rows = json.load(f)["data"][:per_class]
        images.append(np.array(rows, dtype=np.float64).reshape(-1, 28, 28))
        labels += [cls] * len(rows)
    return np.concatenate(images), np.array(labels)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--digits", required=True)
    ap.add_argument("--fashion", required=True)
    ap.add_argument("--out", default="data")
    ap.add_argument("--train-size", type=int, default=6000)
    ap.add_argument("--fashion-per-class", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    images, labels = load_digits(args.digits)
    order = rng.permutation(len(labels))
    images, labels = images[order], labels[order]
    tr = args.train_size
    write_idx_images(os.path.join(args.out, "digits-train-images-idx3-ubyte.gz"), images[:tr])
    write_idx_labels(os.path.join(args.out, "digits-train-labels-idx1-ubyte.gz"), labels[:tr])
    write_idx_images(os.path.join(args.out, "digits-test-images-idx3-ubyte.gz"), images[tr:])
    write_idx_labels(os.path.join(args.out, "digits-test-labels-idx1-ubyte.gz"), labels[tr:])
    with open(os.path.join(args.out, "digits.json"), "w") as f:
        json.dump({
            "name": "digits",
            "num_classes": 10,
            "train": {"images": "digits-train-images-idx3-ubyte.gz",
                      "labels": "digits-train-labels-idx1-ubyte.gz"},
            "test": {"images": "digits-test-images-idx3-ubyte.gz",
                     "labels": "digits-test-labels-idx1-ubyte.gz"},
            "normalization": {"mean": 0.0, "std": 1.0},
        }, f, indent=2)
        f.write("\n")

    fimages, flabels = load_fashion(args.fashion, args.fashion_per_class)
    order = rng.permutation(len(flabels))
    write_idx_images(os.path.join(args.out, "fashion-images-idx3-ubyte.gz"), fimages[order])
    write_idx_labels(os.path.join(args.out, "fashion-labels-idx1-ubyte.gz"), flabels[order])
    with open(os.path.join(args.out, "fashion.json"), "w") as f:
        json.dump({
            "name": "fashion",
            "num_classes": 10,
            "test": {"images": "fashion-images-idx3-ubyte.gz",
                     "labels": "fashion-labels-idx1-ubyte.gz"},
            "normalization": {"mean": 0.0, "std": 1.0},
        }, f, indent=2)
        f.write("\n")
    print(f"digits: {tr} train / {len(labels) - tr} test; fashion: {len(flabels)}")


if __name__ == "__main__":
    main()

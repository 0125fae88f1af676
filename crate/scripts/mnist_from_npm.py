#!/usr/bin/env python3
"""Build IDX-format MNIST files from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, MIT) ships 10,000 real
MNIST digits as per-class JSON arrays of [0,1] pixel values. This script
shuffles them with a fixed seed and writes an 8,000 / 2,000 train/test split
in the standard gzip-compressed IDX layout, so the rest of the toolchain can
consume it exactly like the official files.

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist-desk
"""

import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_COUNT = 8000
SEED = 20190612


def load(digits_dir):
    samples = []
    for label in range(10):
        data = json.loads((digits_dir / f"{label}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for start in range(0, len(data), 784):
            pixels = bytes(round(v * 255) for v in data[start : start + 784])
            samples.append((pixels, label))
    return samples


def write_images(path, samples):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)


def write_labels(path, samples):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    digits_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load(digits_dir)
    random.Random(SEED).shuffle(samples)
    train, test = samples[:TRAIN_COUNT], samples[TRAIN_COUNT:]
    write_images(out_dir / "train-images-idx3-ubyte.gz", train)
    write_labels(out_dir / "train-labels-idx1-ubyte.gz", train)
    write_images(out_dir / "t10k-images-idx3-ubyte.gz", test)
    write_labels(out_dir / "t10k-labels-idx1-ubyte.gz", test)
    print(f"wrote {len(train)} train / {len(test)} test images to {out_dir}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package into
IDX image/label files (big-endian, standard MNIST magics).

Usage: convert_npm_mnist.py <npm-package-dir> <out-dir>

Produces train-images.idx3 / train-labels.idx1 (5000 samples) and
test-images.idx3 / test-labels.idx1 (5000 samples), interleaved
deterministically so both splits cover all classes.
"""
import json
import random
import struct
import sys
from pathlib import Path


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for digit in range(10):
        data = json.loads((src / "src" / "digits" / f"{digit}.json").read_text())["data"]
        for i in range(0, len(data), 784):
            samples.append((data[i : i + 784], digit))
    rng = random.Random(20260826)
    rng.shuffle(samples)
    half = len(samples) // 2
    for name, part in (("train", samples[:half]), ("test", samples[half:])):
        write_images(out / f"{name}-images.idx3", [s[0] for s in part])
        write_labels(out / f"{name}-labels.idx1", [s[1] for s in part])
        print(name, len(part))


if __name__ == "__main__":
    main()

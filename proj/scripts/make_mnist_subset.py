#!/usr/bin/env python3
"""Convert the digit corpus bundled in the `mnist` npm package into IDX files.

Usage: make_mnist_subset.py <npm-package-dir> <out-dir> [--test 2000] [--seed 20240229]

The npm package (MIT, https://www.npmjs.com/package/mnist) ships 10,000 real
MNIST digits as JSON arrays of [0,1] floats rounded to three decimals. They are
mapped back to bytes with round(v * 255), shuffled with a fixed seed and split
into train/test files using the standard MNIST file names.
"""
import argparse
import json
import pathlib
import random
import struct


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("package")
    ap.add_argument("out")
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20240229)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        path = pathlib.Path(args.package) / "src" / "digits" / f"{digit}.json"
        flat = json.loads(path.read_text())["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in flat[i:i + 784]]
            samples.append((pixels, digit))

    random.Random(args.seed).shuffle(samples)
    test, train = samples[:args.test], samples[args.test:]
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", [s[0] for s in train])
    write_labels(out / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_images(out / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_labels(out / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    print(f"train={len(train)} test={len(test)} -> {out}")


if __name__ == "__main__":
    main()

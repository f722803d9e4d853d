#!/usr/bin/env python3
"""Lay out raw MNIST / Fashion-MNIST as IDX files under a data root.

  <root>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
  <root>/fashion-mnist/...same names...
  <root>/*/checksums.json   {"file": "fnv1a64:<hex>"}

Sources may be directories of IDX files (optionally .gz) or the npm
`fashion-mnist` package layout (src/clothes/<class>.json, key "data"), which
is converted to IDX with the first 6000 images of every class as the train
split.
"""

import argparse
import gzip
import json
import shutil
import struct
from pathlib import Path

NAMES = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]


def fnv1a64(data: bytes) -> str:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"fnv1a64:{h:016x}"


def write_idx_images(path: Path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path: Path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def copy_idx(src: Path, dst: Path):
    dst.mkdir(parents=True, exist_ok=True)
    for name in NAMES:
        plain, gz = src / name, src / (name + ".gz")
        if plain.exists():
            shutil.copyfile(plain, dst / name)
        elif gz.exists():
            with gzip.open(gz, "rb") as f:
                (dst / name).write_bytes(f.read())
        else:
            raise SystemExit(f"missing {name} in {src}")


def convert_npm_json(src: Path, dst: Path, train_per_class: int = 6000):
    dst.mkdir(parents=True, exist_ok=True)
    train, test = ([], []), ([], [])
    for label in range(10):
        rows = [r for r in json.loads((src / f"{label}.json").read_text())["data"] if len(r) == 784]
        for k, r in enumerate(rows):
            split = train if k < train_per_class else test
            split[0].append(r)
            split[1].append(label)
    write_idx_images(dst / NAMES[0], train[0])
    write_idx_labels(dst / NAMES[1], train[1])
    write_idx_images(dst / NAMES[2], test[0])
    write_idx_labels(dst / NAMES[3], test[1])


def write_checksums(dst: Path):
    sums = {name: fnv1a64((dst / name).read_bytes()) for name in NAMES}
    (dst / "checksums.json").write_text(json.dumps(sums, indent=2) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--root", required=True, type=Path)
    ap.add_argument("--mnist", type=Path, help="directory with MNIST IDX files")
    ap.add_argument("--fashion", type=Path, help="directory with Fashion-MNIST IDX files")
    ap.add_argument("--fashion-json", type=Path, help="npm package clothes/ directory")
    a = ap.parse_args()
    if a.mnist:
        copy_idx(a.mnist, a.root / "mnist")
        write_checksums(a.root / "mnist")
    if a.fashion:
        copy_idx(a.fashion, a.root / "fashion-mnist")
        write_checksums(a.root / "fashion-mnist")
    elif a.fashion_json:
        convert_npm_json(a.fashion_json, a.root / "fashion-mnist")
        write_checksums(a.root / "fashion-mnist")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Rebuild the bundled datasets under data/.

MNIST: the 10,000 digits shipped in the npm package `mnist` (v1.1.0), rounded
back to bytes, shuffled with a fixed seed and written as gzipped IDX files.
Mushroom: the KEEL copy of UCI agaricus-lepiota shipped in the PyPI package
`keel-ds` (rows with missing stalk-root removed, 5644 rows).

Requires `npm` and `pip` with registry access.
"""
import gzip
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile
import zipfile

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data"


def build_mnist(tmp: pathlib.Path) -> None:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True)
    with tarfile.open(next(tmp.glob("mnist-*.tgz"))) as tar:
        tar.extractall(tmp)
    examples = []
    for digit in range(10):
        data = json.loads((tmp / "package/src/digits" / f"{digit}.json").read_text())["data"]
        for i in range(0, len(data), 784):
            pixels = bytes(round(v * 255) for v in data[i : i + 784])
            examples.append((pixels, digit))
    random.Random(20200623).shuffle(examples)
    out = ROOT / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    n = len(examples)
    with gzip.GzipFile(out / "mnist10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for pixels, _ in examples:
            f.write(pixels)
    with gzip.GzipFile(out / "mnist10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(label for _, label in examples))


def build_mushroom(tmp: pathlib.Path) -> None:
    subprocess.run(
        ["pip", "download", "--no-deps", "keel-ds==0.2.5", "-d", str(tmp)], check=True
    )
    wheel = next(tmp.glob("keel_ds-*.whl"))
    raw = zipfile.ZipFile(wheel).read("keel_ds/data/balanced/raw/mushroom.dat").decode()
    out = ROOT / "uci"
    out.mkdir(parents=True, exist_ok=True)
    (out / "mushroom.csv").write_text(raw if raw.endswith("\n") else raw + "\n")


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as d:
        build_mnist(pathlib.Path(d))
        build_mushroom(pathlib.Path(d))

#!/usr/bin/env python3
"""Convert the 10k MNIST digits bundled in the `mnist` npm package to IDX files.

The npm package (MIT, github.com/cazala/mnist) ships src/digits/<d>.json with
pixel intensities already scaled to [0, 1] and rounded to three decimals. The
original bytes are recovered with round(v * 255).

Usage:
    tools/mnist_npm_to_idx.py [--package DIR] [--out data/mnist10k]

Without --package the script runs `npm pack mnist@1.1.0` in a temp directory.
"""

import argparse
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile

SIDE = 28


def fetch_package(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = next(workdir.glob("mnist-*.tgz"))
    with tarfile.open(tgz) as tar:
        tar.extractall(workdir)
    return workdir / "package"


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--package", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist10k"))
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        pkg = args.package or fetch_package(pathlib.Path(tmp))
        images = bytearray()
        labels = bytearray()
        for digit in range(10):
            values = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
            assert len(values) % (SIDE * SIDE) == 0
            images.extend(min(255, max(0, round(v * 255))) for v in values)
            labels.extend([digit] * (len(values) // (SIDE * SIDE)))

    count = len(labels)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "images-idx3-ubyte").write_bytes(
        struct.pack(">IIII", 0x00000803, count, SIDE, SIDE) + bytes(images))
    (args.out / "labels-idx1-ubyte").write_bytes(
        struct.pack(">II", 0x00000801, count) + bytes(labels))
    print(f"wrote {count} samples to {args.out}")


if __name__ == "__main__":
    main()

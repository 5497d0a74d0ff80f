#!/usr/bin/env python3
"""Write the 5,000-image MNIST subset bundled with mlxtend as IDX files.

Usage: pip download mlxtend --no-deps -d /tmp/mlx
       python3 scripts/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path


def main() -> None:
    wheel, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as z:
        text = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = [list(map(int, line.split(","))) for line in text.splitlines() if line.strip()]
    # 784 pixel columns followed by the label.
    with open(out / "mnist5k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for r in rows:
            f.write(bytes(r[:784]))
    with open(out / "mnist5k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(rows)))
        f.write(bytes(r[784] for r in rows))


if __name__ == "__main__":
    main()

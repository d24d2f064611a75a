"""Write the bundled 5k MNIST subset as canonical gzip'd IDX files.

The source is the ``mnist_5k.csv.gz`` table shipped inside the mlxtend wheel
(500 images per digit drawn from the MNIST training set). Per digit the first
400 rows go to ``train-*`` and the last 100 to ``t10k-*``; each split is then
shuffled with a fixed seed so that prefixes stay roughly class balanced.

Usage::

    pip download mlxtend==0.23.1 --no-deps -d /tmp/dl
    python scripts/make_mnist_subset.py /tmp/dl/mlxtend-0.23.1-py3-none-any.whl
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "discrete_grad" / "_mnist"


def write_idx(path, array, magic):
    header = struct.pack(">i", magic) + b"".join(struct.pack(">i", d) for d in array.shape)
    # mtime=0 keeps the archives byte-for-byte reproducible
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + array.astype(np.uint8).tobytes())


def main(wheel):
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",").astype(np.uint8)
    images, labels = table[:, :-1], table[:, -1]

    train_idx, test_idx = [], []
    for digit in range(10):
        rows = np.flatnonzero(labels == digit)
        train_idx.extend(rows[:400])
        test_idx.extend(rows[400:])
    rng = np.random.default_rng(0)
    train_idx = rng.permutation(train_idx)
    test_idx = rng.permutation(test_idx)

    OUT.mkdir(parents=True, exist_ok=True)
    for prefix, idx in (("train", train_idx), ("t10k", test_idx)):
        write_idx(OUT / f"{prefix}-images-idx3-ubyte.gz", images[idx].reshape(-1, 28, 28), 0x803)
        write_idx(OUT / f"{prefix}-labels-idx1-ubyte.gz", labels[idx], 0x801)
        print(prefix, len(idx))


if __name__ == "__main__":
    main(sys.argv[1])

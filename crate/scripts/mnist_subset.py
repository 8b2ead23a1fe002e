"""Convert mlxtend's mnist_5k.csv.gz into IDX files.

Each CSV row holds 784 pixel values (0-255) followed by the digit label.
The first 300 images of every class go to the train split and the
remaining 200 to the test split, so the two splits are disjoint.

usage: python3 scripts/mnist_subset.py path/to/mnist_5k.csv.gz data/mnist
"""

import gzip
import struct
import sys
from pathlib import Path

import numpy as np

TRAIN_PER_CLASS = 300


def write_idx(path, array):
    header = struct.pack(">BBBB", 0, 0, 8, array.ndim)
    header += b"".join(struct.pack(">I", d) for d in array.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + array.astype(np.uint8).tobytes())


def main(src, out):
    rows = np.loadtxt(src, delimiter=",", dtype=np.int64)
    pixels, labels = rows[:, :784], rows[:, 784]
    train, test = [], []
    for digit in range(10):
        idx = np.flatnonzero(labels == digit)
        train.extend(idx[:TRAIN_PER_CLASS])
        test.extend(idx[TRAIN_PER_CLASS:])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for prefix, idx in (("train", sorted(train)), ("t10k", sorted(test))):
        write_idx(out / f"{prefix}-images-idx3-ubyte.gz", pixels[idx].reshape(-1, 28, 28))
        write_idx(out / f"{prefix}-labels-idx1-ubyte.gz", labels[idx])
        print(prefix, len(idx))


if __name__ == "__main__":
    main(*sys.argv[1:3])

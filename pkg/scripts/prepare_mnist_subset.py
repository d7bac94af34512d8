"""Convert the 5000-image MNIST sample shipped inside the ``mlxtend`` wheel to IDX files.

    pip download mlxtend==0.23.1 --no-deps -d /tmp/dl
    python3 scripts/prepare_mnist_subset.py /tmp/dl/mlxtend-0.23.1-py3-none-any.whl data/mnist

Writes gzip-compressed ``train-*`` (4000 images) and ``t10k-*`` (1000 images)
IDX files with a seeded class-mixed split.
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from insensor_snn.datasets import MNIST_FILES, write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(src: Path) -> np.ndarray:
    if src.suffix == ".whl":
        raw = zipfile.ZipFile(src).read(MEMBER)
    else:
        raw = src.read_bytes()
    return np.loadtxt(io.StringIO(gzip.decompress(raw).decode()), delimiter=",", dtype=np.int64)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("source", type=Path, help="mlxtend wheel or mnist_5k.csv.gz")
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rows = read_rows(args.source)
    images = rows[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    labels = rows[:, -1].astype(np.uint8)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    splits = {"test": order[:args.test], "train": order[args.test:]}
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for split, idx in splits.items():
        img_name, lab_name = MNIST_FILES[split]
        for name, arr in ((img_name, images[idx]), (lab_name, labels[idx])):
            tmp = args.out_dir / name
            write_idx(tmp, arr)
            (args.out_dir / f"{name}.gz").write_bytes(gzip.compress(tmp.read_bytes(), mtime=0))
            tmp.unlink()
        print(f"{split}: {len(idx)} images")


if __name__ == "__main__":
    main()

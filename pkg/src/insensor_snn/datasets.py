"""Readers for the published CIFAR-10 binary and MNIST IDX layouts."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class FormatError(ValueError):
    """Dataset bytes do not match the expected binary layout."""


@dataclass
class Dataset:
    images: np.ndarray  # float32 [N, C, H, W] in [0, 1]
    labels: np.ndarray  # int64 [N]
    name: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, n: Optional[int], seed: int = 0) -> "Dataset":
        """Seeded random subset of ``n`` records (all of them when ``n`` is None)."""
        if n is None or n >= len(self):
            return self
        idx = np.sort(np.random.default_rng(seed).permutation(len(self))[:n])
        return Dataset(self.images[idx], self.labels[idx], self.name)


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
        else:
            raise FileNotFoundError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_cifar10(raw: bytes, name: str = "cifar10") -> Dataset:
    """Records of 1 label byte + 3072 channel-planar pixel bytes."""
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        cut = len(raw) - len(raw) % CIFAR_RECORD
        raise FormatError(
            f"{name}: truncated record at byte offset {cut} "
            f"({len(raw)} bytes is not a multiple of {CIFAR_RECORD})"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"{name}: label {labels[bad[0]]} > 9 at byte offset {bad[0] * CIFAR_RECORD}")
    images = rec[:, 1:].reshape(-1, *CIFAR_SHAPE).astype(np.float32) / 255.0
    return Dataset(images, labels, name)


def load_cifar10(path, split: str = "train") -> Dataset:
    """Read one ``*.bin`` batch, or every batch of ``split`` inside a directory."""
    path = Path(path)
    if path.is_dir():
        files = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
        for sub in ("", "cifar-10-batches-bin"):
            if (path / sub / files[0]).exists():
                path = path / sub
                break
        parts = [parse_cifar10(_read_bytes(path / f), f) for f in files]
        return Dataset(np.concatenate([p.images for p in parts]),
                       np.concatenate([p.labels for p in parts]), "cifar10")
    return parse_cifar10(_read_bytes(path), path.name)


def parse_idx(raw: bytes, expected_magic: int, name: str = "idx") -> np.ndarray:
    """Big-endian IDX array of unsigned bytes."""
    if len(raw) < 4:
        raise FormatError(f"{name}: truncated header at byte offset {len(raw)}")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{name}: magic 0x{magic:08x} != 0x{expected_magic:08x} at byte offset 0")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{name}: truncated dimension table at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + int(np.prod(dims))
    if len(raw) != need:
        raise FormatError(
            f"{name}: payload ends at byte offset {len(raw)}, expected {need} for dims {dims}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist(images_path, labels_path=None, split: str = "train") -> Dataset:
    """IDX images (magic 0x803) + labels (magic 0x801); a directory picks ``split`` files."""
    images_path = Path(images_path)
    if images_path.is_dir():
        img_name, lab_name = MNIST_FILES[split]
        labels_path = images_path / lab_name
        images_path = images_path / img_name
    if labels_path is None:
        raise FormatError("MNIST needs both an images and a labels file")
    imgs = parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, Path(images_path).name)
    labs = parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, Path(labels_path).name)
    if imgs.ndim != 3 or labs.ndim != 1:
        raise FormatError(f"unexpected IDX ranks: images {imgs.shape}, labels {labs.shape}")
    if len(imgs) != len(labs):
        raise FormatError(f"{len(imgs)} images but {len(labs)} labels")
    images = imgs[:, None].astype(np.float32) / 255.0
    return Dataset(images, labs.astype(np.int64), "mnist")


def write_idx(path, array: np.ndarray):
    """Write a uint8 array in IDX layout (used for fixtures and conversions)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def write_cifar10(path, images_u8: np.ndarray, labels: np.ndarray):
    """Write ``[N, 3, 32, 32]`` uint8 images as CIFAR-10 binary records."""
    imgs = np.ascontiguousarray(images_u8, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], imgs], axis=1)
    Path(path).write_bytes(rec.tobytes())


def load_digits_proxy(size: int = 16) -> Dataset:
    """scikit-learn's bundled 8x8 handwritten digits, upsampled to ``size`` x ``size``.

    Offline stand-in for quick experiments; not a substitute for MNIST or CIFAR-10.
    """
    from sklearn.datasets import load_digits

    d = load_digits()
    img = d.images.astype(np.float32) / 16.0
    rep = size // 8
    img = np.kron(img, np.ones((rep, rep), dtype=np.float32))
    return Dataset(img[:, None], d.target.astype(np.int64), "digits")

import gzip
import struct

import numpy as np
import pytest

from insensor_snn import checkpoint as ckpt
from insensor_snn.config import ConfigFileError, parse_config
from insensor_snn.datasets import (
    CIFAR_RECORD,
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    FormatError,
    load_cifar10,
    load_mnist,
    parse_cifar10,
    parse_idx,
    write_cifar10,
    write_idx,
)
from insensor_snn.numerics import DimensionError
from insensor_snn.snn import FrontendConfig, build_network, minimal, vgg6_lite

# ------------------------------------------------------------- checkpoint


def trained_ish(factory=minimal, seed=0):
    net = build_network(factory(), seed)
    net.forward(np.random.default_rng(seed).random((8, 3, 32, 32)), train=True)
    return net


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    net = trained_ish(vgg6_lite)
    ck = ckpt.from_network(net, {"accuracy": 0.5})
    ckpt.save(tmp_path / "a.ckpt", ck)
    back = ckpt.load(tmp_path / "a.ckpt")
    assert back.metrics == {"accuracy": 0.5}
    for k, v in ck.tensors.items():
        assert back.tensors[k].dtype == v.dtype and back.tensors[k].tobytes() == v.tobytes()
    assert ckpt.to_bytes(back) == (tmp_path / "a.ckpt").read_bytes()
    x = np.random.default_rng(1).random((2, 3, 32, 32))
    np.testing.assert_array_equal(ckpt.to_network(back).forward(x), net.forward(x))


def test_in_sensor_checkpoint_round_trip(tmp_path):
    fused = trained_ish().to_in_sensor(FrontendConfig({"family": "saturating"}, 4))
    ckpt.save(tmp_path / "f.ckpt", ckpt.from_network(fused))
    back = ckpt.to_network(ckpt.load(tmp_path / "f.ckpt"))
    assert back.in_sensor
    x = np.random.default_rng(2).random((3, 3, 32, 32))
    np.testing.assert_array_equal(back.forward(x), fused.forward(x))


def test_checkpoint_corruption_is_format_error():
    raw = ckpt.to_bytes(ckpt.from_network(trained_ish()))
    with pytest.raises(FormatError, match="bad magic"):
        ckpt.from_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(FormatError, match="truncated"):
        ckpt.from_bytes(raw[:-5])
    with pytest.raises(FormatError, match="truncated"):
        ckpt.from_bytes(raw[:20])


def test_checkpoint_against_wrong_config_is_dimension_error():
    ck = ckpt.from_network(trained_ish())
    with pytest.raises(DimensionError):
        ckpt.to_network(ck, minimal(first_channels=4))


# ------------------------------------------------------------- CIFAR-10

def cifar_bytes(n, seed=0):
    rng = np.random.default_rng(seed)
    imgs = rng.integers(0, 256, (n, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, 10, n).astype(np.uint8)
    return imgs, labels


def test_cifar_record_layout(tmp_path):
    imgs, labels = cifar_bytes(3)
    write_cifar10(tmp_path / "b.bin", imgs, labels)
    raw = (tmp_path / "b.bin").read_bytes()
    assert len(raw) == 3 * CIFAR_RECORD
    assert raw[CIFAR_RECORD] == labels[1]
    assert raw[CIFAR_RECORD + 1 + 1024] == imgs[1, 1, 0, 0]  # channel-planar: green plane starts at +1024
    ds = load_cifar10(tmp_path / "b.bin")
    assert ds.images.dtype == np.float32 and ds.images.shape == (3, 3, 32, 32)
    np.testing.assert_array_equal(ds.images * 255.0, imgs.astype(np.float32))
    np.testing.assert_array_equal(ds.labels, labels)


def test_cifar_truncation_reports_offset():
    imgs, labels = cifar_bytes(2)
    raw = np.concatenate([labels[:, None], imgs.reshape(2, -1)], 1).tobytes()
    with pytest.raises(FormatError, match=f"byte offset {CIFAR_RECORD}"):
        parse_cifar10(raw[:-7])
    bad = bytearray(raw)
    bad[CIFAR_RECORD] = 11
    with pytest.raises(FormatError, match=f"label 11 > 9 at byte offset {CIFAR_RECORD}"):
        parse_cifar10(bytes(bad))


def test_cifar_directory_layout(tmp_path):
    d = tmp_path / "cifar-10-batches-bin"
    d.mkdir()
    for i in range(1, 6):
        write_cifar10(d / f"data_batch_{i}.bin", *cifar_bytes(2, i))
    write_cifar10(d / "test_batch.bin", *cifar_bytes(3, 9))
    assert len(load_cifar10(tmp_path, "train")) == 10
    assert len(load_cifar10(tmp_path, "test")) == 3
    with pytest.raises(FileNotFoundError):
        load_cifar10(tmp_path / "missing", "train")


# ------------------------------------------------------------- MNIST IDX

def test_idx_round_trip_and_gzip(tmp_path):
    rng = np.random.default_rng(3)
    imgs = rng.integers(0, 256, (5, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 5).astype(np.uint8)
    write_idx(tmp_path / "i", imgs)
    write_idx(tmp_path / "l", labels)
    raw = (tmp_path / "i").read_bytes()
    assert struct.unpack(">IIII", raw[:16]) == (IDX_IMAGES_MAGIC, 5, 28, 28)
    (tmp_path / "l.gz").write_bytes(gzip.compress((tmp_path / "l").read_bytes()))
    ds = load_mnist(tmp_path / "i", tmp_path / "l.gz")
    assert ds.images.shape == (5, 1, 28, 28)
    np.testing.assert_array_equal(ds.images[:, 0] * 255.0, imgs.astype(np.float32))
    np.testing.assert_array_equal(ds.labels, labels)


def test_idx_magic_and_length_errors():
    raw = struct.pack(">II", IDX_LABELS_MAGIC, 3) + bytes([1, 2, 3])
    np.testing.assert_array_equal(parse_idx(raw, IDX_LABELS_MAGIC), [1, 2, 3])
    with pytest.raises(FormatError, match="magic 0x00000801 != 0x00000803 at byte offset 0"):
        parse_idx(raw, IDX_IMAGES_MAGIC)
    with pytest.raises(FormatError, match="payload ends at byte offset 10"):
        parse_idx(raw[:-1], IDX_LABELS_MAGIC)


def test_shipped_mnist_subset_loads():
    from conftest import MNIST_DIR

    try:
        tr = load_mnist(MNIST_DIR, split="train")
        te = load_mnist(MNIST_DIR, split="test")
    except FileNotFoundError:
        pytest.skip(f"MNIST files not found under {MNIST_DIR}")
    assert tr.shape == te.shape == (1, 28, 28)
    assert tr.num_classes == te.num_classes == 10


# ------------------------------------------------------------- config

def test_config_minimal_and_seed_override():
    cfg = parse_config("seed: 3\ndataset: {name: digits}\nnetwork: {preset: vgg6_lite, first_channels: 4}\n")
    assert cfg.seed == 3 and cfg.training.seed == 3
    assert cfg.network.input_shape == (1, 16, 16) and cfg.network.layers[0].channels == 4
    assert parse_config("seed: 3\n", seed=9).seed == 9


def test_config_seed_is_mandatory():
    with pytest.raises(ConfigFileError, match="seed"):
        parse_config("dataset: {name: digits}\n")


@pytest.mark.parametrize("text,line,needle", [
    ("seed: 1\ndataset:\n  name: digits\n  bogus: 2\n", 4, "bogus"),
    ("seed: 1\ntraining:\n  epochs: 2\n  lr: -1\n", 2, "training"),
    ("seed: 1\nnetwork:\n  preset: nope\n", 3, "nope"),
    ("seed: 1\ndataset: {name: mnist, path: /does/not/exist}\n", 2, "does not exist"),
    ("seed: 1\nnetwork: [unclosed\n", 3, "YAML"),
])
def test_config_errors_name_the_line(text, line, needle):
    with pytest.raises(ConfigFileError, match=needle) as exc:
        parse_config(text, "exp.yaml")
    assert str(exc.value).startswith(f"exp.yaml:{line}:")

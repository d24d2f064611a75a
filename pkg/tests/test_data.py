import gzip
import os
import struct

import numpy as np
import pytest

from discrete_grad.autodiff import Tensor
from discrete_grad.data import (
    BLOCK,
    GRID,
    BadMagicError,
    CountMismatchError,
    TruncatedFileError,
    batches,
    load_dataset,
    load_idx,
    load_mnist,
    mnist_root,
    read_idx_images,
    stratified_prefix,
    synthetic,
    write_idx_images,
    write_idx_labels,
)
from discrete_grad.errors import DataError
from discrete_grad.models import CategoricalLatentSpec, MlpSpec, ModelSpec
from discrete_grad.training import evaluate


def test_idx_round_trip(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    labels = np.arange(5, dtype=np.uint8)
    write_idx_images(tmp_path / "i.gz", imgs)
    write_idx_labels(tmp_path / "l", labels)
    d = load_idx(tmp_path / "i.gz", tmp_path / "l")
    assert d.images.shape == (5, 784)
    assert np.array_equal(d.images, imgs.reshape(5, -1) / 255.0)
    assert np.array_equal(d.labels, labels)


def test_all_zero_payload(tmp_path):
    write_idx_images(tmp_path / "z", np.zeros((3, 28, 28), dtype=np.uint8))
    assert np.array_equal(load_idx(tmp_path / "z").images, np.zeros((3, 784)))


def test_idx_errors_are_distinct(tmp_path):
    write_idx_images(tmp_path / "i", np.zeros((4, 28, 28), dtype=np.uint8))
    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "trunc").write_bytes(raw[:-10])
    with pytest.raises(TruncatedFileError):
        read_idx_images(tmp_path / "trunc")
    (tmp_path / "hdr").write_bytes(raw[:6])
    with pytest.raises(TruncatedFileError):
        read_idx_images(tmp_path / "hdr")
    (tmp_path / "magic").write_bytes(struct.pack(">I", 0x0801) + raw[4:])
    with pytest.raises(BadMagicError):
        read_idx_images(tmp_path / "magic")
    (tmp_path / "gz").write_bytes(gzip.compress(raw)[:-20])
    with pytest.raises(TruncatedFileError):
        read_idx_images(tmp_path / "gz")
    write_idx_labels(tmp_path / "l", np.zeros(3, dtype=np.uint8))
    with pytest.raises(CountMismatchError):
        load_idx(tmp_path / "i", tmp_path / "l")
    assert len({TruncatedFileError, BadMagicError, CountMismatchError}) == 3


def test_bundled_mnist_subset():
    d = load_mnist(2000, 1000)
    assert d.n_train == 2000 and d.n_val == 1000
    assert d.images.shape == (3000, 784)
    assert 0.0 <= d.images.min() and d.images.max() <= 1.0
    counts = np.bincount(d.labels[:2000].astype(int), minlength=10)
    assert np.all(counts == 200)
    assert not d.images.flags.writeable


def test_missing_dataset_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("DISCRETE_GRAD_DATA_DIR", str(tmp_path))
    assert mnist_root() == tmp_path
    with pytest.raises(FileNotFoundError):
        load_mnist()


def test_full_mnist_train_file_when_available():
    root = os.environ.get("DISCRETE_GRAD_DATA_DIR")
    if not root:
        pytest.skip("DISCRETE_GRAD_DATA_DIR not set; full MNIST not available offline")
    d = load_mnist(subset=None, val_subset=None)
    if d.n_train != 60000:
        pytest.skip("data dir does not hold the full MNIST training file")
    assert d.images.shape[1] == 784


def test_stratified_prefix():
    labels = np.array([0, 1, 0, 1, 0, 1, 2, 2])
    assert stratified_prefix(labels, 5).tolist() == [0, 1, 2, 3, 6]
    with pytest.raises(DataError):
        stratified_prefix(labels, 9)


def test_synthetic_determinism_and_values():
    a, b = synthetic(50, seed=9), synthetic(50, seed=9)
    assert np.array_equal(a.images, b.images)
    assert set(np.unique(a.images)) <= {0.0, 1.0}
    assert not np.array_equal(a.images, synthetic(50, seed=10).images)
    assert a.n_val == 5


def _witness_model():
    """Hand-built encoder/decoder: one bit per 4x4 block."""
    n_bits = GRID * GRID
    spec = ModelSpec(
        "binary_ae",
        CategoricalLatentSpec(n_bits, 2),
        MlpSpec((784, 2 * n_bits), ("none",)),
        MlpSpec((n_bits, 784), ("sigmoid",)),
        beta=0.0,
    )
    block_of = np.kron(np.arange(n_bits).reshape(GRID, GRID), np.ones((BLOCK, BLOCK), dtype=int)).ravel()
    member = (block_of[:, None] == np.arange(n_bits)[None, :]).astype(float)  # [784, 49]
    enc_w = np.zeros((784, 2 * n_bits))
    enc_w[:, 0::2] = member * (40.0 / BLOCK ** 2)
    enc_b = np.zeros(2 * n_bits)
    enc_b[0::2] = -20.0  # logit of "on" is 40 * (block mean - 0.5)
    params = {
        "encoder.0.weight": Tensor(enc_w),
        "encoder.0.bias": Tensor(enc_b),
        "decoder.0.weight": Tensor(member.T * 20.0),
        "decoder.0.bias": Tensor(np.full(784, -10.0)),
    }
    return spec, params


def test_blockwise_witness_decoder_learns_synthetic():
    d = synthetic(300, seed=1)
    spec, params = _witness_model()
    assert evaluate(params, spec, d.images)["mse"] < 0.05


def test_batches_sizes_order_and_partition():
    imgs = np.arange(10.0)[:, None]
    sizes = [b.shape[0] for b in batches(imgs, 3, shuffle=False)]
    assert sizes == [3, 3, 3, 1]
    assert np.array_equal(np.concatenate(list(batches(imgs, 3, shuffle=False))), imgs)
    shuffled = np.concatenate(list(batches(imgs, 4, seed=5, epoch=2)))
    assert sorted(shuffled.ravel().tolist()) == list(range(10))
    again = np.concatenate(list(batches(imgs, 4, seed=5, epoch=2)))
    assert np.array_equal(shuffled, again)
    other = np.concatenate(list(batches(imgs, 4, seed=5, epoch=3)))
    assert not np.array_equal(shuffled, other)


def test_load_dataset_dispatch():
    d = load_dataset("synthetic", 100, 20, seed=2)
    assert (d.n_train, d.n_val) == (100, 20)
    with pytest.raises(DataError):
        load_dataset("cifar")

import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wtfree import ContractError, DataFormatError
from wtfree.data import (
    CIFAR_RECORD,
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    LabeledImageSet,
    batch_indices,
    load_cifar10_binary,
    load_idx_images,
    load_idx_labels,
    load_mnist_idx,
    load_named_dataset,
    save_cifar10_binary,
    save_idx_images,
    save_idx_labels,
    synthetic_gaussians,
)
from wtfree.tensor import make_rng


def tiny_idx_pair(tmp_path, n=5, h=6, w=6, seed=0):
    rng = make_rng(seed)
    images = rng.random((n, 1, h, w))
    labels = rng.integers(0, 10, size=n)
    ip, lp = tmp_path / "imgs", tmp_path / "labs"
    save_idx_images(ip, images)
    save_idx_labels(lp, labels)
    return images, labels, ip, lp


# -------------------------------------------------------------- IDX files


def test_idx_round_trip_quantizes_to_255ths(tmp_path):
    images, labels, ip, lp = tiny_idx_pair(tmp_path)
    ds = load_mnist_idx(ip, lp)
    assert ds.images.shape == images.shape
    assert np.max(np.abs(ds.images - images)) <= 0.5 / 255.0 + 1e-12
    np.testing.assert_array_equal(ds.labels, labels)
    assert ds.n_classes == 10


def test_idx_u8_payload_survives_exactly(tmp_path):
    # Data already on the /255 grid comes back bit-identical.
    grid = np.arange(256, dtype=np.float64).reshape(1, 1, 16, 16) / 255.0
    save_idx_images(tmp_path / "g", grid)
    back = load_idx_images(tmp_path / "g")
    np.testing.assert_array_equal(back, grid)


def test_idx_gzip_transparency(tmp_path):
    images, labels, ip, lp = tiny_idx_pair(tmp_path)
    gz = tmp_path / "imgs.gz"
    gz.write_bytes(gzip.compress(ip.read_bytes()))
    np.testing.assert_array_equal(load_idx_images(gz), load_idx_images(ip))


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(struct.pack(">4I", 0xDEADBEEF, 1, 2, 2) + b"\x00" * 4)
    with pytest.raises(DataFormatError, match="magic"):
        load_idx_images(p)


def test_idx_truncated_header(tmp_path):
    p = tmp_path / "short"
    p.write_bytes(b"\x00\x00\x08")
    with pytest.raises(DataFormatError, match="short"):
        load_idx_images(p)


def test_idx_body_size_mismatch(tmp_path):
    p = tmp_path / "lying"
    p.write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, 3, 4, 4) + b"\x00" * 10)
    with pytest.raises(DataFormatError, match="promises"):
        load_idx_images(p)


def test_idx_label_count_mismatch(tmp_path):
    images, labels, ip, lp = tiny_idx_pair(tmp_path)
    save_idx_labels(lp, labels[:-1])
    with pytest.raises(DataFormatError, match="labels"):
        load_mnist_idx(ip, lp)


def test_idx_label_out_of_class_range(tmp_path):
    images, labels, ip, lp = tiny_idx_pair(tmp_path)
    bad = labels.copy()
    bad[0] = 11
    save_idx_labels(lp, bad)
    with pytest.raises(DataFormatError, match="out of range"):
        load_mnist_idx(ip, lp)


def test_idx_labels_round_trip(tmp_path):
    labels = np.array([0, 9, 3, 3, 7])
    save_idx_labels(tmp_path / "l", labels)
    np.testing.assert_array_equal(load_idx_labels(tmp_path / "l"), labels)


@given(blob=st.binary(max_size=200))
@settings(max_examples=120, deadline=None)
def test_idx_fuzz_random_bytes_give_structured_errors(blob, tmp_path_factory):
    p = tmp_path_factory.mktemp("fz") / "blob"
    p.write_bytes(blob)
    try:
        load_idx_images(p)
    except DataFormatError:
        pass  # the only acceptable failure mode


@given(cut=st.integers(0, 196))
@settings(max_examples=60, deadline=None)
def test_idx_fuzz_truncations_of_valid_file(cut, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("tr")
    rng = make_rng(1)
    save_idx_images(tmp / "ok", rng.random((3, 1, 8, 8)))
    blob = (tmp / "ok").read_bytes()
    cut = min(cut, len(blob) - 1)
    (tmp / "cut").write_bytes(blob[:cut])
    with pytest.raises(DataFormatError):
        load_idx_images(tmp / "cut")


# ------------------------------------------------------------ CIFAR files


def test_cifar_round_trip(tmp_path):
    rng = make_rng(3)
    images = rng.random((4, 3, 32, 32))
    labels = rng.integers(0, 10, size=4)
    p = tmp_path / "batch.bin"
    save_cifar10_binary(p, images, labels)
    ds = load_cifar10_binary(p)
    assert ds.images.shape == (4, 3, 32, 32)
    assert np.max(np.abs(ds.images - images)) <= 0.5 / 255.0 + 1e-12
    np.testing.assert_array_equal(ds.labels, labels)


def test_cifar_concatenates_batches(tmp_path):
    rng = make_rng(4)
    paths = []
    for i in range(2):
        p = tmp_path / f"b{i}.bin"
        save_cifar10_binary(p, rng.random((3, 3, 32, 32)), rng.integers(0, 10, size=3))
        paths.append(p)
    ds = load_cifar10_binary(paths)
    assert len(ds) == 6


def test_cifar_bad_record_size(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"\x00" * (CIFAR_RECORD + 1))
    with pytest.raises(DataFormatError, match="multiple"):
        load_cifar10_binary(p)


def test_cifar_empty_file(tmp_path):
    p = tmp_path / "empty.bin"
    p.write_bytes(b"")
    with pytest.raises(DataFormatError):
        load_cifar10_binary(p)


def test_cifar_label_out_of_range(tmp_path):
    rec = bytearray(CIFAR_RECORD)
    rec[0] = 10
    p = tmp_path / "bad.bin"
    p.write_bytes(bytes(rec))
    with pytest.raises(DataFormatError, match="label"):
        load_cifar10_binary(p)


@given(blob=st.binary(max_size=2 * CIFAR_RECORD))
@settings(max_examples=60, deadline=None)
def test_cifar_fuzz_random_bytes(blob, tmp_path_factory):
    p = tmp_path_factory.mktemp("cf") / "blob.bin"
    p.write_bytes(blob)
    try:
        load_cifar10_binary(p)
    except DataFormatError:
        pass


# ---------------------------------------------------------------- invariants


def test_labeled_image_set_validation():
    ok = np.zeros((2, 1, 4, 4))
    labels = np.array([0, 1])
    with pytest.raises(ContractError):
        LabeledImageSet(images=np.zeros((2, 4, 4)), labels=labels, name="x", n_classes=2)
    with pytest.raises(ContractError):
        LabeledImageSet(images=ok + 1.5, labels=labels, name="x", n_classes=2)
    with pytest.raises(ContractError):
        LabeledImageSet(images=ok, labels=np.array([0, 2]), name="x", n_classes=2)
    with pytest.raises(ContractError):
        LabeledImageSet(images=ok, labels=np.array([0.0, 1.0]), name="x", n_classes=2)
    with pytest.raises(ContractError):
        LabeledImageSet(images=ok, labels=np.array([0]), name="x", n_classes=2)


def test_subset_and_take():
    ds = synthetic_gaussians(30, seed=5)
    sub = ds.subset(np.array([3, 1, 4]))
    np.testing.assert_array_equal(sub.labels, ds.labels[[3, 1, 4]])
    head = ds.take(7)
    np.testing.assert_array_equal(head.images, ds.images[:7])
    randomized = ds.take(7, seed=2)
    assert len(randomized) == 7
    assert randomized.take(99).images.shape[0] == 7


def test_batch_indices_cover_everything_once():
    seen = np.concatenate(list(batch_indices(10, 3)))
    np.testing.assert_array_equal(np.sort(seen), np.arange(10))
    sizes = [len(b) for b in batch_indices(10, 3)]
    assert sizes == [3, 3, 3, 1]


def test_batch_indices_shuffles_with_rng():
    a = np.concatenate(list(batch_indices(50, 7, make_rng(1))))
    b = np.concatenate(list(batch_indices(50, 7, make_rng(1))))
    c = np.concatenate(list(batch_indices(50, 7, make_rng(2))))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    np.testing.assert_array_equal(np.sort(a), np.arange(50))
    with pytest.raises(ContractError):
        list(batch_indices(5, 0))


# ------------------------------------------------------------- synthetic


def test_synthetic_is_deterministic_and_in_range():
    a = synthetic_gaussians(40, seed=9)
    b = synthetic_gaussians(40, seed=9)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.images.min() >= 0.0 and a.images.max() <= 1.0
    assert a.images.shape == (40, 1, 14, 14)
    assert set(np.unique(a.labels)) <= {0, 1}


def test_synthetic_classes_are_separated():
    ds = synthetic_gaussians(400, seed=3, noise=0.05)
    mean0 = ds.images[ds.labels == 0].mean(axis=0)
    mean1 = ds.images[ds.labels == 1].mean(axis=0)
    assert np.abs(mean0 - mean1).mean() > 0.05


def test_synthetic_validation():
    with pytest.raises(ContractError):
        synthetic_gaussians(0)
    with pytest.raises(ContractError):
        synthetic_gaussians(5, noise=-1)


# -------------------------------------------------------------- discovery


def test_load_named_dataset_synthetic_splits_differ():
    train = load_named_dataset("synthetic", "train")
    test = load_named_dataset("synthetic", "test")
    assert len(train) > len(test)
    assert train.input_shape == (1, 16, 16)  # fits the stock conv network
    assert not np.array_equal(train.images[: len(test)], test.images)


def test_load_named_dataset_requires_directory(monkeypatch):
    monkeypatch.delenv("WTFREE_DATA_DIR", raising=False)
    with pytest.raises(DataFormatError, match="data directory"):
        load_named_dataset("mnist", "test")


def test_load_named_dataset_reports_missing_files(tmp_path):
    with pytest.raises(DataFormatError, match="missing"):
        load_named_dataset("mnist", "test", data_dir=str(tmp_path))


def test_load_named_dataset_env_var(monkeypatch, tmp_path):
    images, labels, ip, lp = tiny_idx_pair(tmp_path, n=4, h=28, w=28)
    (tmp_path / "t10k-images-idx3-ubyte").write_bytes(ip.read_bytes())
    (tmp_path / "t10k-labels-idx1-ubyte").write_bytes(lp.read_bytes())
    monkeypatch.setenv("WTFREE_DATA_DIR", str(tmp_path))
    ds = load_named_dataset("mnist", "test")
    assert len(ds) == 4 and ds.input_shape == (1, 28, 28)


def test_load_named_dataset_unknown_name():
    with pytest.raises(ContractError):
        load_named_dataset("svhn", "test")

import gzip
import struct

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from dnpu_forge.utils.datasets import (
    MNIST_FILES,
    export_rings_csv,
    load_mnist,
    make_rings,
    read_idx_images,
    read_idx_labels,
    standardize_pixels,
)
from dnpu_forge.utils.errors import ContractError, FormatError


def test_rings_respect_the_geometry():
    train, test = make_rings(0.00625, n_per_class=100, seed=4)
    for dataset in (train, test):
        assert len(dataset) == 200
        assert dataset.class_counts().tolist() == [100, 100]
        radii = dataset.radii
        assert (radii[dataset.labels == 0] <= 0.25).all()
        assert (radii[dataset.labels == 1] >= 0.25 + 0.00625).all()
        assert (radii[dataset.labels == 1] <= 0.55).all()
        assert ((dataset.inputs >= -1.2) & (dataset.inputs <= 0.6)).all()


def test_rings_are_seeded():
    a, _ = make_rings(0.1, n_per_class=20, seed=3)
    b, _ = make_rings(0.1, n_per_class=20, seed=3)
    c, _ = make_rings(0.1, n_per_class=20, seed=4)
    assert np.array_equal(a.inputs, b.inputs)
    assert not np.array_equal(a.inputs, c.inputs)


def test_train_and_test_differ():
    train, test = make_rings(0.1, n_per_class=20, seed=3)
    assert not np.array_equal(train.inputs, test.inputs)
    assert (train.split, test.split) == ("train", "test")


def test_wide_gap_widens_the_outer_radius():
    train, _ = make_rings(0.4, n_per_class=50, seed=1)
    assert train.outer_radius == pytest.approx(0.85)
    assert (train.radii[train.labels == 1] >= 0.65).all()


@pytest.mark.parametrize("gap,outer", [(0.0, None), (-0.1, None), (0.3, 0.5)])
def test_infeasible_geometry(gap, outer):
    with pytest.raises(ContractError):
        make_rings(gap, outer_radius=outer)


def test_rings_leaving_the_voltage_range():
    with pytest.raises(ContractError):
        make_rings(0.1, center=(0.3, 0.3))


def test_rings_are_uniform_in_area():
    train, _ = make_rings(0.1, n_per_class=10_000, seed=0)
    inner = train.radii[train.labels == 0]
    assert stats.kstest((inner / 0.25) ** 2, "uniform").pvalue > 1e-3
    outer = train.radii[train.labels == 1]
    scaled = (outer ** 2 - 0.35 ** 2) / (0.55 ** 2 - 0.35 ** 2)
    assert stats.kstest(scaled, "uniform").pvalue > 1e-3


def test_ring_csv_export(tmp_path):
    train, test = make_rings(0.1, n_per_class=5, seed=0)
    frame = pd.read_csv(export_rings_csv(tmp_path / "rings.csv", train, test))
    assert list(frame.columns) == ["x_volts", "y_volts", "label", "split"]
    assert frame["split"].value_counts().to_dict() == {"train": 10, "test": 10}


def _write_images(path, images, magic=0x803, rows=28, cols=28, compress=False):
    payload = struct.pack(">IIII", magic, len(images), rows, cols) + np.asarray(images, dtype=np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)
    return path


def _write_labels(path, labels, magic=0x801, compress=False):
    payload = struct.pack(">II", magic, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)
    return path


def _mnist_directory(directory, n_train=12, n_test=4, compress=False):
    rng = np.random.default_rng(0)
    suffix = ".gz" if compress else ""
    _write_images(directory / (MNIST_FILES["train_images"] + suffix),
                  rng.integers(0, 256, (n_train, 784)), compress=compress)
    _write_labels(directory / (MNIST_FILES["train_labels"] + suffix), np.arange(n_train) % 10, compress=compress)
    _write_images(directory / (MNIST_FILES["test_images"] + suffix),
                  rng.integers(0, 256, (n_test, 784)), compress=compress)
    _write_labels(directory / (MNIST_FILES["test_labels"] + suffix), np.arange(n_test) % 10, compress=compress)
    return directory


def test_read_idx_images(tmp_path):
    images = np.zeros((2, 784), dtype=np.uint8)
    images[1, 5] = 255
    loaded = read_idx_images(_write_images(tmp_path / "images", images), expected_count=2)
    assert loaded.shape == (2, 784)
    assert loaded[1, 5] == 255


def test_pixel_standardization():
    assert standardize_pixels(np.array([0, 255], dtype=np.uint8)).tolist() == [-0.5, 0.5]


def test_idx_bad_magic(tmp_path):
    with pytest.raises(FormatError):
        read_idx_images(_write_images(tmp_path / "images", np.zeros((1, 784)), magic=0x801))


def test_idx_wrong_image_size(tmp_path):
    with pytest.raises(FormatError):
        read_idx_images(_write_images(tmp_path / "images", np.zeros((1, 32 * 32)), rows=32, cols=32))


def test_idx_unexpected_count(tmp_path):
    with pytest.raises(FormatError):
        read_idx_images(_write_images(tmp_path / "images", np.zeros((3, 784))), expected_count=60_000)


def test_idx_truncated_labels(tmp_path):
    path = _write_labels(tmp_path / "labels", [1, 2, 3])
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(FormatError):
        read_idx_labels(path)


def test_idx_label_outside_digits(tmp_path):
    with pytest.raises(FormatError):
        read_idx_labels(_write_labels(tmp_path / "labels", [1, 12]))


@pytest.mark.parametrize("compress", [False, True])
def test_load_mnist_splits_and_standardizes(tmp_path, compress):
    data = load_mnist(_mnist_directory(tmp_path, compress=compress), validation_size=3, expected_counts=(12, 4))
    assert data.sizes() == (9, 3, 4)
    assert data.train_images.min() >= -0.5 and data.train_images.max() <= 0.5
    labels = np.sort(np.concatenate([data.train_labels, data.validation_labels]))
    assert labels.tolist() == sorted((np.arange(12) % 10).tolist())


def test_load_mnist_split_is_seeded(tmp_path):
    directory = _mnist_directory(tmp_path)
    a = load_mnist(directory, split_seed=1, validation_size=3, expected_counts=(12, 4))
    b = load_mnist(directory, split_seed=1, validation_size=3, expected_counts=(12, 4))
    assert np.array_equal(a.validation_images, b.validation_images)
    assert a.subset(train=2).sizes() == (2, 3, 4)


def test_load_mnist_missing_file(tmp_path):
    with pytest.raises(FormatError):
        load_mnist(tmp_path, expected_counts=(12, 4))

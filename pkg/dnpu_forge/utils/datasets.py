"""
Datasets: concentric-ring binary data and MNIST from IDX files.
"""

import gzip
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from dnpu_forge.utils.errors import ContractError, FormatError
from dnpu_forge.utils.seeding import numpy_rng
from dnpu_forge.utils.validators import validate_count

logger = logging.getLogger(__name__)

RING_CENTER = (-0.3, -0.3)  # V
RING_INNER_RADIUS = 0.25
RING_OUTER_RADIUS = 0.55
RING_MIN_ANNULUS_WIDTH = 0.2
RING_INPUT_RANGES = ((-1.2, 0.6), (-1.2, 0.6))

IDX_LABEL_MAGIC = 0x00000801
IDX_IMAGE_MAGIC = 0x00000803
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
MNIST_COUNTS = (60_000, 10_000)
MNIST_VALIDATION_SIZE = 5_000
MNIST_SPLIT_SEED = 12345


@dataclass
class RingDataset:
    """Two-class ring data: inputs (n, 2) in V, labels 0 (inner disk) / 1 (outer annulus)."""

    inputs: np.ndarray
    labels: np.ndarray
    split: str
    gap: float
    seed: int
    center: tuple
    inner_radius: float
    outer_radius: float

    def __len__(self):
        return len(self.labels)

    @property
    def radii(self):
        return np.hypot(self.inputs[:, 0] - self.center[0], self.inputs[:, 1] - self.center[1])

    def class_counts(self):
        return np.bincount(self.labels, minlength=2)

    def to_frame(self):
        return pd.DataFrame({
            "x_volts": self.inputs[:, 0],
            "y_volts": self.inputs[:, 1],
            "label": self.labels,
            "split": self.split,
        })


def _ring_split(rng, n_per_class, split, gap, seed, center, inner, outer):
    angle0 = rng.uniform(0.0, 2 * np.pi, n_per_class)
    radius0 = inner * np.sqrt(rng.random(n_per_class))
    annulus_inner = inner + gap
    angle1 = rng.uniform(0.0, 2 * np.pi, n_per_class)
    radius1 = np.sqrt(annulus_inner ** 2 + rng.random(n_per_class) * (outer ** 2 - annulus_inner ** 2))
    radius = np.concatenate([radius0, radius1])
    angle = np.concatenate([angle0, angle1])
    inputs = np.column_stack([center[0] + radius * np.cos(angle), center[1] + radius * np.sin(angle)])
    labels = np.repeat([0, 1], n_per_class)
    order = rng.permutation(len(labels))
    return RingDataset(inputs[order], labels[order], split, gap, seed, tuple(center), inner, outer)


def make_rings(gap, n_per_class=100, seed=0, center=RING_CENTER, inner_radius=RING_INNER_RADIUS,
               outer_radius=None, input_ranges=RING_INPUT_RANGES):
    """
    Generate independent train and test ring datasets.

    Class 0 is uniform over the disk of radius inner_radius; class 1 is uniform
    over the annulus [inner_radius + gap, outer_radius]. When outer_radius is
    omitted it is 0.55 V, widened if needed to keep a 0.2 V annulus.

    Args:
        gap (float): radial separation between the classes (V)
        n_per_class (int): samples per class per split
        seed (int): generator seed
        center (tuple): ring centre (V)
        inner_radius (float): class-0 disk radius (V)
        outer_radius (float): class-1 outer radius (V)
        input_ranges: voltage ranges of the two input electrodes

    Returns:
        tuple: (train RingDataset, test RingDataset)
    """
    n_per_class = validate_count("n_per_class", n_per_class)
    if not gap > 0:
        raise ContractError(f"Ring gap must be > 0, got {gap}")
    if outer_radius is None:
        outer_radius = max(RING_OUTER_RADIUS, inner_radius + gap + RING_MIN_ANNULUS_WIDTH)
    if not 0 < inner_radius < inner_radius + gap < outer_radius:
        raise ContractError(f"Infeasible ring geometry: inner {inner_radius}, gap {gap}, outer {outer_radius}")
    for axis, (low, high) in enumerate(input_ranges):
        if center[axis] - outer_radius < low or center[axis] + outer_radius > high:
            raise ContractError(f"Rings of radius {outer_radius} V around {center} leave the range [{low}, {high}] V")
    train = _ring_split(numpy_rng(seed, 0), n_per_class, "train", gap, seed, center, inner_radius, outer_radius)
    test = _ring_split(numpy_rng(seed, 1), n_per_class, "test", gap, seed, center, inner_radius, outer_radius)
    logger.info(f"Generated ring data: gap {gap * 1000:.2f} mV, {2 * n_per_class} samples per split")
    return train, test


def export_rings_csv(path, *datasets):
    pd.concat([d.to_frame() for d in datasets], ignore_index=True).to_csv(path, index=False)
    return Path(path)


@dataclass
class MnistData:
    """Flattened images in [-0.5, 0.5] and integer labels for the three splits."""

    train_images: np.ndarray
    train_labels: np.ndarray
    validation_images: np.ndarray
    validation_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    def subset(self, train=None, validation=None, test=None):
        """Deterministic prefixes of each split; None keeps a split whole."""
        return replace(
            self,
            train_images=self.train_images[:train], train_labels=self.train_labels[:train],
            validation_images=self.validation_images[:validation],
            validation_labels=self.validation_labels[:validation],
            test_images=self.test_images[:test], test_labels=self.test_labels[:test],
        )

    def sizes(self):
        return len(self.train_labels), len(self.validation_labels), len(self.test_labels)


def _locate(directory, name):
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise FormatError(directory / name, "IDX file not found (raw or .gz)")


def _read_bytes(path):
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except (OSError, EOFError) as e:
        raise FormatError(path, f"cannot read IDX file: {e}") from e


def read_idx_images(path, expected_count=None):
    """uint8 images (count, rows * cols) from an IDX3 file; 28 x 28 required."""
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise FormatError(path, "truncated IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(path, f"bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
    if (rows, cols) != (28, 28):
        raise FormatError(path, f"images are {rows}x{cols}, expected 28x28")
    if expected_count is not None and count != expected_count:
        raise FormatError(path, f"holds {count} images, expected {expected_count}")
    if len(raw) - 16 != count * rows * cols:
        raise FormatError(path, f"truncated: {len(raw) - 16} pixel bytes for {count} images")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows * cols)


def read_idx_labels(path, expected_count=None):
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise FormatError(path, "truncated IDX label header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(path, f"bad magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")
    if expected_count is not None and count != expected_count:
        raise FormatError(path, f"holds {count} labels, expected {expected_count}")
    if len(raw) - 8 != count:
        raise FormatError(path, f"truncated: {len(raw) - 8} label bytes for {count} labels")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise FormatError(path, f"label {labels.max()} outside 0-9")
    return labels


def standardize_pixels(pixels):
    return pixels.astype(np.float64) / 255.0 - 0.5


def load_mnist(directory, split_seed=MNIST_SPLIT_SEED, validation_size=MNIST_VALIDATION_SIZE,
               expected_counts=MNIST_COUNTS):
    """
    Load the four MNIST IDX files and split off a validation set.

    Args:
        directory (str): holds train/t10k images and labels, raw or gzipped
        split_seed (int): seed of the train/validation shuffle
        validation_size (int): images moved from the training file to validation
        expected_counts (tuple): required (training, test) image counts

    Returns:
        MnistData
    """
    directory = Path(directory)
    train_count, test_count = expected_counts
    train_images = read_idx_images(_locate(directory, MNIST_FILES["train_images"]), train_count)
    train_labels = read_idx_labels(_locate(directory, MNIST_FILES["train_labels"]), train_count)
    test_images = read_idx_images(_locate(directory, MNIST_FILES["test_images"]), test_count)
    test_labels = read_idx_labels(_locate(directory, MNIST_FILES["test_labels"]), test_count)
    if not 0 <= validation_size < len(train_labels):
        raise ContractError(f"validation_size {validation_size} must be below the training count {len(train_labels)}")

    order = np.random.default_rng(split_seed).permutation(len(train_labels))
    validation, train = order[:validation_size], order[validation_size:]
    logger.info(f"Loaded MNIST from {directory}: {len(train)} train, {len(validation)} validation, "
                f"{len(test_labels)} test")
    return MnistData(
        standardize_pixels(train_images[train]), train_labels[train],
        standardize_pixels(train_images[validation]), train_labels[validation],
        standardize_pixels(test_images), test_labels,
    )

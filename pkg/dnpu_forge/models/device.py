"""
Synthetic stand-in for a boron-doped silicon DNPU.

The device response is a frozen, seeded tanh network over the 7 activation
electrode voltages, affinely calibrated into the output current range, with
additive Gaussian read noise. Voltages outside an electrode's working range
are rejected, never clamped.
"""

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from dnpu_forge.models.dense import DenseNetwork, as_tensor
from dnpu_forge.utils.errors import ContractError, FormatError
from dnpu_forge.utils.validators import validate_count, validate_ranges, validate_voltages, validate_width

logger = logging.getLogger(__name__)

ELECTRODE_COUNT = 7
DEFAULT_VOLTAGE_RANGES = ((-1.2, 0.6),) * 5 + ((-0.7, 0.3),) * 2
DEFAULT_CURRENT_RANGE = (-300.0, 100.0)
DEFAULT_NOISE_SIGMA = 1.4
DEFAULT_STRUCTURE_SEED = 20211

GROUND_TRUTH_LAYERS = [ELECTRODE_COUNT, 64, 64, 64, 1]
GROUND_TRUTH_GAIN = 1.5
GROUND_TRUTH_BIAS_STD = 0.5
CALIBRATION_POINTS = 100_000

IO_MAGIC = b"DNPUIO01"


@dataclass(frozen=True)
class DeviceSpec:
    """Electrical envelope of the device: voltages in V, currents in nA, time in s, rate in Hz."""

    voltage_ranges: tuple = DEFAULT_VOLTAGE_RANGES
    current_range: tuple = DEFAULT_CURRENT_RANGE
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    measurement_duration: float = 0.8
    sampling_rate: float = 100.0

    electrode_count = ELECTRODE_COUNT
    readout_count = 1

    def __post_init__(self):
        object.__setattr__(self, "voltage_ranges", tuple(tuple(map(float, r)) for r in self.voltage_ranges))
        object.__setattr__(self, "current_range", tuple(map(float, self.current_range)))
        if len(self.voltage_ranges) != ELECTRODE_COUNT:
            raise ContractError(f"Need {ELECTRODE_COUNT} voltage ranges, got {len(self.voltage_ranges)}")
        validate_ranges(self.voltage_ranges)
        validate_ranges([self.current_range])
        if self.noise_sigma < 0:
            raise ContractError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        samples = self.sampling_rate * self.measurement_duration
        if samples < 0.5 or abs(samples - round(samples)) > 1e-9:
            raise ContractError(f"sampling_rate * measurement_duration must be a positive integer, got {samples}")

    @property
    def samples_per_point(self):
        return int(round(self.sampling_rate * self.measurement_duration))

    @property
    def current_span(self):
        return self.current_range[1] - self.current_range[0]

    @property
    def noise_variance(self):
        return self.noise_sigma ** 2


@dataclass
class MeasurementTrace:
    """Output current samples (nA) recorded while one voltage vector was held."""

    voltages: np.ndarray
    samples: np.ndarray
    duration: float
    rate: float

    @property
    def mean(self):
        return float(np.mean(self.samples))


@dataclass
class IODataset:
    """Sampled device input-output pairs: voltages (n, 7) in V, currents (n,) in nA."""

    voltages: np.ndarray
    currents: np.ndarray

    def __len__(self):
        return len(self.currents)

    def split(self, fraction, seed):
        """Seeded shuffle, then the first `fraction` of samples and the rest."""
        order = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(fraction * len(self)))
        head, tail = order[:cut], order[cut:]
        return (IODataset(self.voltages[head], self.currents[head]),
                IODataset(self.voltages[tail], self.currents[tail]))


def normalize_voltages(voltages, ranges):
    """Map each electrode's working range linearly onto [-1, 1]."""
    low = torch.tensor([r[0] for r in ranges], dtype=torch.float64)
    high = torch.tensor([r[1] for r in ranges], dtype=torch.float64)
    return 2.0 * (as_tensor(voltages) - low) / (high - low) - 1.0


def box_corners(ranges):
    return np.array(list(itertools.product(*ranges)), dtype=np.float64)


def uniform_voltages(rng, n, ranges):
    low = np.array([r[0] for r in ranges])
    high = np.array([r[1] for r in ranges])
    return low + (high - low) * rng.random((n, len(ranges)))


def build_ground_truth(structure_seed):
    """Frozen 7-64-64-64-1 tanh network with Gaussian weights of std gain/sqrt(fan_in)."""
    net = DenseNetwork(GROUND_TRUTH_LAYERS, activations=["tanh", "tanh", "tanh", "identity"])
    generator = torch.Generator().manual_seed(int(structure_seed))
    with torch.no_grad():
        for layer in net.layers:
            std = GROUND_TRUTH_GAIN / np.sqrt(layer.in_features)
            layer.weight.copy_(torch.randn(layer.weight.shape, generator=generator, dtype=torch.float64) * std)
            layer.bias.copy_(torch.randn(layer.bias.shape, generator=generator, dtype=torch.float64)
                             * GROUND_TRUTH_BIAS_STD)
    return net.freeze()


def calibrate(net, spec, seed, n_points=CALIBRATION_POINTS):
    """
    Affine map (scale, offset) taking the raw network output onto the current range.

    The calibration set is every corner of the voltage box plus n_points uniform points.
    """
    rng = np.random.default_rng(seed)
    points = np.vstack([box_corners(spec.voltage_ranges), uniform_voltages(rng, n_points, spec.voltage_ranges)])
    with torch.no_grad():
        raw = net(normalize_voltages(points, spec.voltage_ranges)).reshape(-1).numpy()
    low, high = float(raw.min()), float(raw.max())
    if not high > low:
        raise ContractError("Device response is constant over the voltage box; cannot calibrate")
    scale = spec.current_span / (high - low)
    offset = spec.current_range[0] - scale * low
    logger.debug(f"Calibrated device: raw output [{low:.4f}, {high:.4f}] -> scale {scale:.4f}, offset {offset:.4f}")
    return scale, offset


class SyntheticDevice:
    """
    Simulated DNPU.

    Noiseless evaluation is a pure function of (structure, voltages) and safe to
    share; the noise stream is single-owner.

    Args:
        spec (DeviceSpec): electrical envelope
        structure_seed (int): seed of the ground-truth network and calibration points
        noise_seed (int): seed of the read-noise stream
        ground_truth (DenseNetwork): optional replacement response network over
            normalized voltages
    """

    def __init__(self, spec=None, structure_seed=DEFAULT_STRUCTURE_SEED, noise_seed=0, ground_truth=None,
                 calibration=None):
        self.spec = spec or DeviceSpec()
        self.structure_seed = int(structure_seed)
        if ground_truth is None:
            ground_truth = build_ground_truth(self.structure_seed)
        self.ground_truth = ground_truth.freeze()
        if self.ground_truth.input_size != ELECTRODE_COUNT or self.ground_truth.output_size != 1:
            raise ContractError("Device ground truth must map 7 voltages to 1 current")
        self.scale, self.offset = calibration or calibrate(self.ground_truth, self.spec, self.structure_seed)
        self.rng = np.random.default_rng(noise_seed)

    @classmethod
    def from_network(cls, spec, net, scale, offset, noise_seed=0):
        """Device whose response is current = scale * net(normalized voltages) + offset."""
        return cls(spec, structure_seed=0, noise_seed=noise_seed, ground_truth=net, calibration=(scale, offset))

    def reseed_noise(self, seed):
        self.rng = np.random.default_rng(seed)

    def response(self, voltages):
        """Noiseless currents for a (n, 7) voltage batch, saturated to the current range."""
        with torch.no_grad():
            raw = self.ground_truth(normalize_voltages(voltages, self.spec.voltage_ranges)).reshape(-1)
        low, high = self.spec.current_range
        return (self.scale * raw + self.offset).clamp(low, high).numpy()

    def _checked(self, voltages):
        voltages = np.asarray(voltages, dtype=np.float64)
        batch = validate_width(voltages.reshape(-1, ELECTRODE_COUNT) if voltages.ndim == 1 else voltages,
                               ELECTRODE_COUNT, "voltages")
        validate_voltages(batch, self.spec.voltage_ranges)
        return batch


def evaluate(device, voltages, noisy=False):
    """
    Output current for one voltage vector.

    Args:
        device (SyntheticDevice): device to evaluate
        voltages: 7 electrode voltages in V
        noisy (bool): add one Gaussian read-noise draw

    Returns:
        float: current in nA
    """
    current = float(device.response(device._checked(voltages))[0])
    if noisy:
        current += float(device.rng.normal(0.0, device.spec.noise_sigma))
    return current


def evaluate_batch(device, voltages, noisy=False):
    """Vectorized evaluate over a (n, 7) batch; returns (n,) currents in nA."""
    currents = device.response(device._checked(voltages))
    if noisy:
        currents = currents + device.rng.normal(0.0, device.spec.noise_sigma, size=currents.shape)
    return currents


def measure_point(device, voltages):
    """Hold one voltage vector for the measurement duration and record every sample."""
    batch = device._checked(voltages)
    samples = measure_sequence(device, batch)[0]
    return MeasurementTrace(batch[0].copy(), samples, device.spec.measurement_duration, device.spec.sampling_rate)


def measure_sequence(device, voltages):
    """
    Measure a sequence of voltage vectors one after another.

    Returns:
        np.ndarray: (n, samples_per_point) currents in nA, one trace per row
    """
    batch = device._checked(voltages)
    base = device.response(batch)
    noise = device.rng.normal(0.0, device.spec.noise_sigma, size=(len(base), device.spec.samples_per_point))
    return base[:, None] + noise


def sample_io(device, n, seed):
    """
    Draw n i.i.d. uniform voltage vectors over the working box and their noisy currents.

    Deterministic given seed; does not touch the device's own noise stream.
    """
    n = validate_count("n", n)
    rng = np.random.default_rng(seed)
    voltages = uniform_voltages(rng, n, device.spec.voltage_ranges)
    currents = device.response(voltages) + rng.normal(0.0, device.spec.noise_sigma, size=n)
    logger.info(f"Sampled {n} device input-output pairs (seed {seed})")
    return IODataset(voltages, currents)


def save_io_dataset(path, dataset):
    """Binary little-endian file: magic, u64 count, then 7 voltages + 1 current per record."""
    records = np.hstack([dataset.voltages, dataset.currents[:, None]]).astype("<f8")
    with open(path, "wb") as f:
        f.write(IO_MAGIC)
        f.write(np.array([len(dataset)], dtype="<u8").tobytes())
        f.write(records.tobytes())
    logger.info(f"Wrote {len(dataset)} records to {path}")
    return Path(path)


def load_io_dataset(path):
    raw = Path(path).read_bytes()
    if raw[:8] != IO_MAGIC:
        raise FormatError(path, f"bad magic {raw[:8]!r}, expected {IO_MAGIC!r}")
    if len(raw) < 16:
        raise FormatError(path, "truncated header")
    count = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    body = raw[16:]
    if len(body) != count * (ELECTRODE_COUNT + 1) * 8:
        raise FormatError(path, f"expected {count} records, found {len(body)} payload bytes")
    records = np.frombuffer(body, dtype="<f8").reshape(count, ELECTRODE_COUNT + 1).astype(np.float64)
    return IODataset(records[:, :ELECTRODE_COUNT].copy(), records[:, ELECTRODE_COUNT].copy())

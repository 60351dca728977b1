import logging
from dataclasses import dataclass, replace

import pandas as pd

from dnpu_forge.experiments.capacity import (
    capacity_points,
    device_accuracy,
    find_classifier,
    labelings,
    validation_threshold,
)
from dnpu_forge.models.device import DeviceSpec, SyntheticDevice, sample_io
from dnpu_forge.models.surrogate import train_surrogate
from dnpu_forge.utils.config import CapacityConfig, DeviceConfig, SelfCheckConfig, SurrogateConfig
from dnpu_forge.utils.seeding import stream_seed

logger = logging.getLogger(__name__)

XOR_LABELS = (0, 1, 1, 0)


@dataclass
class SelfCheckReport:
    passed: bool
    found: bool
    attempts: int
    device_accuracy: float
    threshold: float
    surrogate_rmse: float
    history: pd.DataFrame = None

    def summary(self):
        return {
            "passed": int(self.passed), "found": int(self.found), "attempts": self.attempts,
            "device_accuracy": self.device_accuracy, "threshold": self.threshold,
            "surrogate_rmse_na": self.surrogate_rmse,
        }


def device_self_check(device_config=DeviceConfig(), config=SelfCheckConfig(), capacity=CapacityConfig(), device=None):
    """
    Reduced-scale pipeline check of a synthetic device seed.

    Samples the device, fits a short surrogate, searches XOR on the four corner
    points and validates the found classifier on the device at 1 - 0.5 / 4.

    Args:
        device_config (DeviceConfig): builds the device when none is given
        config (SelfCheckConfig): sample count, surrogate epochs, attempts
        capacity (CapacityConfig): search protocol
        device (SyntheticDevice): device to check instead of one built from device_config

    Returns:
        SelfCheckReport: passed iff XOR is found and passes device validation
    """
    if device is None:
        device = SyntheticDevice(DeviceSpec(noise_sigma=device_config.noise_sigma), device_config.structure_seed,
                                 device_config.noise_seed)
    logger.info(f"Self-check of device seed {device.structure_seed}")
    dataset = sample_io(device, config.n_samples, stream_seed(config.seed, 0))
    surrogate, history = train_surrogate(
        dataset, SurrogateConfig(epochs=config.surrogate_epochs, seed=config.seed), device.spec,
        provenance={"structure_seed": device.structure_seed, "samples": config.n_samples},
    )
    points = capacity_points(4)
    labels = labelings(4)[int("".join(map(str, XOR_LABELS)), 2)]
    search = replace(capacity, attempts=config.attempts)
    result = find_classifier("dnpu-surrogate", points, labels, surrogate, search, stream_seed(config.seed, 1))
    threshold = validation_threshold(len(points))
    accuracy = float("nan")
    if result.found:
        accuracy = device_accuracy(device, result.classifier, points, labels, search, stream_seed(config.seed, 2))
    passed = result.found and accuracy > threshold
    if passed:
        logger.info(f"Self-check passed: XOR found on attempt {result.attempts}, device accuracy {accuracy:.4f}")
    else:
        logger.warning(f"Self-check failed for device seed {device.structure_seed}: found={result.found}, "
                       f"device accuracy {accuracy:.4f}")
    return SelfCheckReport(passed, result.found, result.attempts, accuracy, threshold, surrogate.fit_rmse, history)

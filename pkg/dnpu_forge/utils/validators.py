import logging

import numpy as np
import torch

from dnpu_forge.utils.errors import ContractError, InputShapeError, VoltageRangeError

logger = logging.getLogger(__name__)


def validate_count(name, value, minimum=1):
    """Validate an integer count (dataset size, trial count, ...)."""
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ContractError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def validate_width(inputs, width, what="input"):
    """
    Check that a batch has the expected trailing dimension.

    Args:
        inputs: 2-D array or tensor, one row per sample
        width (int): expected number of columns
        what (str): name used in the error message

    Returns:
        The inputs, unchanged
    """
    if inputs.ndim != 2 or inputs.shape[1] != width:
        raise InputShapeError(f"{what} must have shape (batch, {width}), got {tuple(inputs.shape)}")
    return inputs


def validate_voltages(voltages, ranges):
    """
    Raise VoltageRangeError for the first voltage outside its electrode range.

    Args:
        voltages: array of shape (..., n_electrodes), volts
        ranges: sequence of (low, high) pairs, one per electrode
    """
    values = voltages.detach().cpu().numpy() if isinstance(voltages, torch.Tensor) else np.asarray(voltages)
    values = values.reshape(-1, len(ranges))
    for electrode, (low, high) in enumerate(ranges):
        column = values[:, electrode]
        bad = ~((column >= low) & (column <= high))
        if bad.any():
            raise VoltageRangeError(electrode, float(column[np.argmax(bad)]), low, high)


def validate_ranges(ranges):
    """Every (low, high) pair must satisfy low < high."""
    for index, (low, high) in enumerate(ranges):
        if not low < high:
            raise ContractError(f"Range {index} is empty: [{low}, {high}]")
    return ranges


def in_ranges(values, ranges):
    """True if every value lies inside its closed range."""
    return all(low <= float(v) <= high for v, (low, high) in zip(values, ranges))

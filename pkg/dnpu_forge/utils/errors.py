"""
Exception hierarchy shared by every dnpu_forge module.

Library code raises these; the command-line entry point maps them to exit codes
(ConfigError -> 2, any other DnpuError -> 1).
"""


class DnpuError(Exception):
    """Base class for all errors raised by dnpu_forge."""


class ContractError(DnpuError, ValueError):
    """A precondition of an operation was violated."""


class InputShapeError(ContractError):
    """Input array has the wrong shape for the network or node."""


class DomainError(ContractError):
    """A value lies outside the mathematical domain of an operation."""


class DegenerateBatchError(ContractError):
    """A batch lacks the class structure a loss needs (e.g. one class only)."""


class VoltageRangeError(ContractError):
    """A voltage was applied outside its electrode's working range."""

    def __init__(self, electrode, voltage, low, high):
        self.electrode = electrode
        self.voltage = voltage
        self.low = low
        self.high = high
        super().__init__(
            f"Voltage {voltage:.6g} V on electrode e{electrode} outside range [{low}, {high}] V"
        )


class NumericError(DnpuError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, parameter_index=None):
        self.parameter_index = parameter_index
        super().__init__(message)


class DivergedTrainingError(NumericError):
    """Training loss became non-finite."""

    def __init__(self, epoch, loss=float("nan")):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch} (loss={loss})")


class FormatError(DnpuError, ValueError):
    """A file does not follow its documented format."""

    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f"{path}: {reason}")


class ConfigError(DnpuError, ValueError):
    """A run configuration violates the schema."""

    def __init__(self, field_path, reason):
        self.field_path = field_path
        super().__init__(f"Config field '{field_path}': {reason}")


class IncompleteRunError(DnpuError, RuntimeError):
    """A run directory has no manifest, so the run never completed."""

"""
Run configuration: YAML documents validated against frozen dataclass sections.

Every default equals the published experimental setting where one exists.
Unknown keys are rejected at any depth.
"""

import dataclasses
import hashlib
import logging
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from dnpu_forge.utils.errors import ConfigError

logger = logging.getLogger(__name__)

EXPERIMENTS = ("sample", "train-surrogate", "capacity", "ring", "mnist", "self-check")
CAPACITY_SYSTEMS = ("dnpu-surrogate", "nn-2", "nn-3", "linear-baseline")
RING_SYSTEMS = ("single", "2-2-1")

OUTPUT_ROOT_ENV = "DNPU_FORGE_OUTPUT_ROOT"
MNIST_DIR_ENV = "DNPU_FORGE_MNIST_DIR"
LOG_LEVEL_ENV = "DNPU_FORGE_LOG_LEVEL"


@dataclass(frozen=True)
class DeviceConfig:
    structure_seed: int = 20211
    noise_sigma: float = 1.4  # nA
    noise_seed: int = 0


@dataclass(frozen=True)
class SamplingConfig:
    n_samples: int = 200_000
    seed: int = 1
    test_samples: int = 20_000
    test_seed: int = 2


@dataclass(frozen=True)
class SurrogateConfig:
    epochs: int = 500
    batch_size: int = 128
    learning_rate: float = 0.0005
    train_fraction: float = 0.9
    seed: int = 0
    log_every: int = 10
    checkpoint: Optional[str] = None  # load instead of sampling and training


@dataclass(frozen=True)
class ControlConfig:
    """Control-voltage training; batch_size None means full batch."""

    epochs: int = 1500
    learning_rate: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    alpha: float = 1.0
    noise_sigma: float = 0.0
    batch_size: Optional[int] = None
    seed: int = 0
    log_every: int = 0


@dataclass(frozen=True)
class CapacityConfig:
    systems: tuple = CAPACITY_SYSTEMS
    n_values: tuple = (4, 5, 6)
    attempts: int = 15
    epochs: int = 1500
    learning_rate: float = 0.03
    beta1: float = 0.995
    beta2: float = 0.999
    alpha: float = 1.0
    initial_noise_variance: float = 1.0
    validate_on_device: bool = True
    validation_train_fraction: float = 0.8
    validation_epochs: int = 500
    validation_learning_rate: float = 0.03
    retry_cycles: int = 1


@dataclass(frozen=True)
class RingConfig:
    gap: float = 0.00625  # V
    n_per_class: int = 100
    data_seed: int = 4
    systems: tuple = RING_SYSTEMS
    n_trials: int = 20
    epochs: int = 400
    learning_rate: float = 0.0065
    noise_variance: float = 1.97  # nA^2
    alpha: float = 1.0
    clip_width: float = 3.0
    stage2_epochs: int = 2000
    stage2_learning_rate: float = 0.01
    validate: bool = True
    validation_runs: int = 50
    fisher_bin_width: float = 0.25
    accuracy_bin_width: float = 0.01


@dataclass(frozen=True)
class MnistConfig:
    data_dir: Optional[str] = None
    receptive_widths: tuple = (3, 7)
    epochs: int = 80
    batch_size: int = 64
    learning_rate: float = 2e-5
    weight_decay: float = 0.1
    logit_scale: float = 0.01  # 1/nA
    split_seed: int = 12345
    train_size: Optional[int] = None
    validation_size: Optional[int] = None
    test_size: Optional[int] = None
    baseline: bool = True
    baseline_learning_rate: float = 3e-4
    log_every: int = 1


@dataclass(frozen=True)
class SelfCheckConfig:
    n_samples: int = 20_000
    surrogate_epochs: int = 30
    attempts: int = 15
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "self-check"
    seed: int = 0
    workers: int = 1
    output_dir: Optional[str] = None
    device: DeviceConfig = field(default_factory=DeviceConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    capacity: CapacityConfig = field(default_factory=CapacityConfig)
    ring: RingConfig = field(default_factory=RingConfig)
    mnist: MnistConfig = field(default_factory=MnistConfig)
    self_check: SelfCheckConfig = field(default_factory=SelfCheckConfig)


_ELEMENT_TYPES = {
    ("capacity", "systems"): str,
    ("capacity", "n_values"): int,
    ("ring", "systems"): str,
    ("mnist", "receptive_widths"): int,
}


def _coerce_scalar(value, kind, path):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {kind}")


def _build(cls, document, path):
    if not isinstance(document, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(document).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in document:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    values = {}
    for name in known:
        if name not in document:
            continue
        where = f"{path}.{name}" if path else name
        value, kind = document[name], hints[name]
        optional = typing.get_origin(kind) in (typing.Union, types.UnionType)
        if optional:
            kind = next(a for a in typing.get_args(kind) if a is not type(None))
            if value is None:
                values[name] = None
                continue
        if dataclasses.is_dataclass(kind):
            values[name] = _build(kind, value, where)
        elif kind is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(where, f"expected a list, got {value!r}")
            element = _ELEMENT_TYPES[(path, name)]
            values[name] = tuple(_coerce_scalar(v, element, f"{where}[{i}]") for i, v in enumerate(value))
        else:
            values[name] = _coerce_scalar(value, kind, where)
    return cls(**values)


def _check(config):
    if config.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {list(EXPERIMENTS)}, got {config.experiment!r}")
    if config.workers < 1:
        raise ConfigError("workers", "must be >= 1")
    for system in config.capacity.systems:
        if system not in CAPACITY_SYSTEMS:
            raise ConfigError("capacity.systems", f"unknown system {system!r}")
    for n in config.capacity.n_values:
        if not 4 <= n <= 10:
            raise ConfigError("capacity.n_values", f"N must lie in [4, 10], got {n}")
    for system in config.ring.systems:
        if system not in RING_SYSTEMS:
            raise ConfigError("ring.systems", f"unknown system {system!r}")
    for width in config.mnist.receptive_widths:
        if width not in (3, 7):
            raise ConfigError("mnist.receptive_widths", f"receptive width must be 3 or 7, got {width}")
    if not 0 < config.surrogate.train_fraction < 1:
        raise ConfigError("surrogate.train_fraction", "must lie strictly between 0 and 1")
    if config.ring.gap <= 0:
        raise ConfigError("ring.gap", "must be > 0")
    return config


def config_from_dict(document):
    """Build a validated RunConfig from a parsed YAML mapping."""
    return _check(_build(RunConfig, document or {}, ""))


def load_config(path):
    """
    Read and validate a YAML run config.

    Args:
        path (str): config file

    Returns:
        RunConfig: frozen, with every omitted field at its default
    """
    try:
        with open(path) as f:
            document = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError("<file>", f"{path} is not valid YAML: {e}") from e
    config = config_from_dict(document)
    logger.info(f"Loaded {config.experiment} config from {path}")
    return config


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def config_to_dict(config):
    return _plain(dataclasses.asdict(config))


def snapshot(config):
    """Resolved config as YAML text; identical configs give identical text."""
    return yaml.safe_dump(config_to_dict(config), sort_keys=True, default_flow_style=False)


def snapshot_digest(config):
    return hashlib.sha256(snapshot(config).encode()).hexdigest()


def output_root(config):
    return Path(config.output_dir or os.getenv(OUTPUT_ROOT_ENV, "./runs"))


def mnist_directory(config):
    directory = config.mnist.data_dir or os.getenv(MNIST_DIR_ENV)
    if not directory:
        raise ConfigError("mnist.data_dir", f"no MNIST directory configured and {MNIST_DIR_ENV} is unset")
    return Path(directory)

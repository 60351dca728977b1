import numpy as np
import pytest
import torch

from dnpu_forge.models.dense import DenseNetwork
from dnpu_forge.models.device import DeviceSpec, SyntheticDevice, sample_io
from dnpu_forge.models.surrogate import SurrogateModel, train_surrogate
from dnpu_forge.utils.config import SurrogateConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_surrogate(seed=3, hidden=(16, 16)):
    """
    Small frozen surrogate with random weights and biases.

    The tanh output keeps every prediction inside the current range, so a
    device built from the same network never saturates.
    """
    rng = np.random.default_rng(seed)
    sizes = [7, *hidden, 1]
    weights = [rng.normal(0.0, 1.5 / np.sqrt(fan_in), (fan_out, fan_in)) for fan_in, fan_out in zip(sizes, sizes[1:])]
    biases = [rng.normal(0.0, 0.3, fan_out) for fan_out in sizes[1:]]
    net = DenseNetwork.from_arrays(weights, biases, ["relu"] * len(hidden) + ["tanh"])
    spec = DeviceSpec()
    return SurrogateModel(net, spec.voltage_ranges, spec.current_range, provenance={"fixture": seed}).freeze()


@pytest.fixture
def surrogate():
    return random_surrogate()


@pytest.fixture(scope="session")
def device():
    return SyntheticDevice(noise_seed=5)


@pytest.fixture
def surrogate_device(surrogate):
    """Noiseless device whose response is exactly the surrogate."""
    spec = DeviceSpec(noise_sigma=0.0)
    return SyntheticDevice.from_network(spec, surrogate.net, surrogate.half_span, surrogate.center)


@pytest.fixture(scope="session")
def fitted_surrogate():
    """Surrogate fitted to the default synthetic device; only the slow tests use it."""
    dataset = sample_io(SyntheticDevice(), 40_000, seed=1)
    surrogate, _ = train_surrogate(dataset, SurrogateConfig(epochs=40, seed=0, log_every=10), DeviceSpec())
    return surrogate


@pytest.fixture(scope="session")
def fitted_device(fitted_surrogate):
    """Noiseless device whose response is exactly the fitted surrogate."""
    spec = DeviceSpec(noise_sigma=0.0)
    return SyntheticDevice.from_network(spec, fitted_surrogate.net, fitted_surrogate.half_span,
                                        fitted_surrogate.center)


@pytest.fixture(autouse=True)
def _float64_defaults():
    torch.manual_seed(0)
    yield

import json
import warnings

import numpy as np
import pytest
import torch

from dnpu_forge.models.device import IODataset, sample_io
from dnpu_forge.models.surrogate import (
    SURROGATE_LAYERS,
    SurrogateModel,
    load_surrogate,
    rmse,
    save_surrogate,
    train_surrogate,
)
from dnpu_forge.utils.config import SurrogateConfig
from dnpu_forge.utils.errors import ContractError, FormatError

from conftest import random_surrogate


def test_untrained_surrogate_architecture():
    model = SurrogateModel.untrained(seed=1)
    assert model.net.layer_sizes == SURROGATE_LAYERS
    assert model.net.activations == ["relu"] * 5 + ["identity"]
    assert (model.center, model.half_span) == (-100.0, 200.0)


def test_forward_rescales_the_network_output(surrogate):
    voltages = np.array([[-1.2, 0.6, -0.3, 0.0, -1.2, -0.7, 0.3]])
    normalized = torch.tensor([[-1.0, 1.0, 0.0, 1.0 / 3.0, -1.0, -1.0, 1.0]], dtype=torch.float64)
    expected = surrogate.net(normalized).reshape(-1) * 200.0 - 100.0
    assert torch.allclose(surrogate(voltages), expected)


def test_rmse_in_nanoamps_and_percent(surrogate):
    voltages = np.full((4, 7), -0.3)
    voltages[:, 5:] = -0.2
    predicted = surrogate(voltages).detach().numpy()
    offsets = np.array([4.0, -4.0, 4.0, -4.0])
    value, percent = rmse(surrogate, IODataset(voltages, predicted + offsets))
    assert value == pytest.approx(4.0)
    assert percent == pytest.approx(1.0)


def test_rmse_of_empty_test_set(surrogate):
    with pytest.raises(ContractError):
        rmse(surrogate, IODataset(np.zeros((0, 7)), np.zeros(0)))


def test_training_needs_enough_samples(device):
    with pytest.raises(ContractError):
        train_surrogate(sample_io(device, 999, seed=1))


def test_training_returns_best_validation_epoch(device):
    dataset = sample_io(device, 1200, seed=1)
    config = SurrogateConfig(epochs=3, batch_size=256, learning_rate=1e-3, seed=2, log_every=1)
    model, history = train_surrogate(dataset, config, provenance={"samples": 1200})
    assert list(history.columns) == ["epoch", "train_rmse_na", "val_rmse_na"]
    assert history["epoch"].tolist() == [0, 1, 2, 3]
    assert model.fit_rmse == pytest.approx(history["val_rmse_na"].min())
    assert model.provenance == {"samples": 1200}
    assert all(not p.requires_grad for p in model.parameters())


def test_training_raises_no_warnings(device):
    dataset = sample_io(device, 1000, seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        train_surrogate(dataset, SurrogateConfig(epochs=2, batch_size=100, seed=1))


def test_training_is_reproducible(device):
    dataset = sample_io(device, 1000, seed=3)
    config = SurrogateConfig(epochs=2, batch_size=200, seed=5)
    first, _ = train_surrogate(dataset, config)
    second, _ = train_surrogate(dataset, config)
    for p, q in zip(first.parameters(), second.parameters()):
        assert torch.equal(p, q)


def test_checkpoint_round_trip(tmp_path, surrogate):
    path = save_surrogate(tmp_path / "surrogate.json", surrogate)
    loaded = load_surrogate(path)
    voltages = np.random.default_rng(0).uniform(-0.7, 0.3, (20, 7))
    assert torch.equal(loaded(voltages), surrogate(voltages))
    assert loaded.provenance == surrogate.provenance
    assert loaded.input_ranges == surrogate.input_ranges


def test_checkpoint_with_wrong_input_width(tmp_path):
    model = random_surrogate()
    path = save_surrogate(tmp_path / "surrogate.json", model)
    document = json.loads(path.read_text())
    document["input_ranges"] = document["input_ranges"][:6]
    path.write_text(json.dumps(document))
    with pytest.raises(FormatError):
        load_surrogate(path)


def test_checkpoint_that_is_not_json(tmp_path):
    path = tmp_path / "surrogate.json"
    path.write_text("not json")
    with pytest.raises(FormatError):
        load_surrogate(path)

import copy
import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch import nn

from dnpu_forge.models.dense import DenseNetwork, as_tensor
from dnpu_forge.models.device import DeviceSpec, normalize_voltages
from dnpu_forge.models.optim import AdamHyper, AdamState, adam_step
from dnpu_forge.utils.config import SurrogateConfig
from dnpu_forge.utils.errors import ContractError, DivergedTrainingError, FormatError
from dnpu_forge.utils.seeding import stream_seed

logger = logging.getLogger(__name__)

SURROGATE_LAYERS = [7, 90, 90, 90, 90, 90, 1]
MIN_TRAINING_SAMPLES = 1000


class SurrogateModel(nn.Module):
    """
    Frozen DNN stand-in for a device: 7 electrode voltages (V) -> output current (nA).

    Inputs are normalized from the device's voltage ranges onto [-1, 1] and the
    network output is scaled by the half-span of the current range around its
    centre; both maps are fixed constants, not parameters.
    """

    def __init__(self, net, input_ranges, current_range, fit_rmse=float("nan"), provenance=None):
        super().__init__()
        self.net = net
        self.input_ranges = tuple(tuple(map(float, r)) for r in input_ranges)
        self.current_range = tuple(map(float, current_range))
        self.center = 0.5 * (self.current_range[0] + self.current_range[1])
        self.half_span = 0.5 * (self.current_range[1] - self.current_range[0])
        self.fit_rmse = float(fit_rmse)
        self.provenance = dict(provenance or {})

    @classmethod
    def untrained(cls, spec=None, seed=0, provenance=None):
        spec = spec or DeviceSpec()
        return cls(DenseNetwork(SURROGATE_LAYERS, seed=seed), spec.voltage_ranges, spec.current_range,
                   provenance=provenance)

    def freeze(self):
        self.net.freeze()
        return self

    def raw(self, normalized):
        return self.net(normalized).reshape(-1)

    def forward(self, voltages):
        return self.raw(normalize_voltages(voltages, self.input_ranges)) * self.half_span + self.center


def _rmse_na(model, voltages, currents):
    with torch.no_grad():
        return float(torch.sqrt(torch.mean((model(voltages) - currents) ** 2)))


def rmse(model, testset):
    """
    Root-mean-squared prediction error on a test set.

    Args:
        model (SurrogateModel): fitted surrogate
        testset (IODataset): held-out samples

    Returns:
        tuple: (rmse in nA, rmse as a percentage of the current range span)
    """
    if len(testset) == 0:
        raise ContractError("rmse needs a non-empty test set")
    value = _rmse_na(model, as_tensor(testset.voltages), as_tensor(testset.currents))
    return value, 100.0 * value / (model.current_range[1] - model.current_range[0])


def train_surrogate(dataset, config=SurrogateConfig(), spec=None, provenance=None):
    """
    Fit a surrogate to sampled device data with MSE and Adam.

    The data are split train/validation by a seeded shuffle; the parameters of
    the best validation epoch (epoch 0 = untrained) are returned.

    Args:
        dataset (IODataset): at least 1,000 samples
        config (SurrogateConfig): epochs, batch size, learning rate, split, seed
        spec (DeviceSpec): supplies voltage and current ranges
        provenance (dict): recorded on the model (device seed, dataset description)

    Returns:
        tuple: (SurrogateModel, pandas.DataFrame history of epoch, train_rmse_na, val_rmse_na)
    """
    if len(dataset) < MIN_TRAINING_SAMPLES:
        raise ContractError(f"train_surrogate needs >= {MIN_TRAINING_SAMPLES} samples, got {len(dataset)}")
    spec = spec or DeviceSpec()
    train, validation = dataset.split(config.train_fraction, config.seed)
    model = SurrogateModel.untrained(spec, seed=config.seed, provenance=provenance)
    net = model.net

    x_train = normalize_voltages(train.voltages, model.input_ranges)
    y_train = (as_tensor(train.currents) - model.center) / model.half_span
    x_val, y_val = as_tensor(validation.voltages), as_tensor(validation.currents)

    state = AdamState(net.parameters(), AdamHyper(learning_rate=config.learning_rate))
    rng = np.random.default_rng(stream_seed(config.seed, 1))

    train_rmse0 = _rmse_na(model, as_tensor(train.voltages), as_tensor(train.currents))
    best_rmse = _rmse_na(model, x_val, y_val)
    best_epoch, best_state = 0, copy.deepcopy(net.state_dict())
    history = [{"epoch": 0, "train_rmse_na": train_rmse0, "val_rmse_na": best_rmse}]
    logger.info(f"Training surrogate on {len(train)} samples ({len(validation)} validation) for {config.epochs} epochs")

    for epoch in range(1, config.epochs + 1):
        order = torch.from_numpy(rng.permutation(len(train)))
        squared = 0.0
        for start in range(0, len(train), config.batch_size):
            index = order[start:start + config.batch_size]
            loss = F.mse_loss(model.raw(x_train[index]), y_train[index])
            if not torch.isfinite(loss):
                raise DivergedTrainingError(epoch, loss.item())
            grads = torch.autograd.grad(loss, state.params)
            adam_step(state, state.params, grads)
            squared += loss.item() * len(index)
        train_rmse = math.sqrt(squared / len(train)) * model.half_span
        val_rmse = _rmse_na(model, x_val, y_val)
        history.append({"epoch": epoch, "train_rmse_na": train_rmse, "val_rmse_na": val_rmse})
        if val_rmse < best_rmse:
            best_rmse, best_epoch, best_state = val_rmse, epoch, copy.deepcopy(net.state_dict())
        if epoch % config.log_every == 0 or epoch == config.epochs:
            logger.info(f"Surrogate epoch {epoch}: train RMSE {train_rmse:.3f} nA, val RMSE {val_rmse:.3f} nA")

    net.load_state_dict(best_state)
    model.freeze()
    model.fit_rmse = best_rmse
    logger.info(f"Surrogate selected at epoch {best_epoch} with validation RMSE {best_rmse:.3f} nA")
    return model, pd.DataFrame(history)


def save_surrogate(path, model):
    document = {
        "network": model.net.to_document(),
        "input_ranges": [list(r) for r in model.input_ranges],
        "current_range": list(model.current_range),
        "fit_rmse": model.fit_rmse,
        "provenance": model.provenance,
    }
    Path(path).write_text(json.dumps(document, indent=1))
    logger.info(f"Saved surrogate checkpoint to {path}")
    return Path(path)


def load_surrogate(path):
    try:
        document = json.loads(Path(path).read_text())
        net = DenseNetwork.from_document(document["network"], source=path)
        model = SurrogateModel(net, document["input_ranges"], document["current_range"],
                               document.get("fit_rmse", float("nan")), document.get("provenance"))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise FormatError(path, f"malformed surrogate checkpoint: {e}") from e
    if net.layer_sizes[0] != len(model.input_ranges) or net.layer_sizes[-1] != 1:
        raise FormatError(path, f"unexpected surrogate layer sizes {net.layer_sizes}")
    return model.freeze()

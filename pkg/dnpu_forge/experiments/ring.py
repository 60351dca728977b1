"""
Ring classification with single DNPUs and layered DNPU networks: two-stage
training, seeded trial sweeps and time-multiplexed validation on a device.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
from torch import nn

from dnpu_forge.models.dense import as_tensor
from dnpu_forge.models.device import measure_sequence
from dnpu_forge.models.dnpu import node_document, train_controls
from dnpu_forge.models.losses import loss_bce_logits, loss_neg_fisher
from dnpu_forge.models.network import LayeredDnpuNetwork, network_forward
from dnpu_forge.models.optim import AdamHyper, AdamState, adam_step
from dnpu_forge.utils.config import ControlConfig, RingConfig
from dnpu_forge.utils.errors import ContractError
from dnpu_forge.utils.jobs import run_jobs
from dnpu_forge.utils.seeding import job_seed, stream_seed

logger = logging.getLogger(__name__)

TOPOLOGIES = {"single": (1,), "2-2-1": (2, 2, 1)}


class LogisticReadout(nn.Module):
    """Logistic neuron on standardized scalar outputs; statistics fixed at fit time."""

    def __init__(self):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros((), dtype=torch.float64))
        self.bias = nn.Parameter(torch.zeros((), dtype=torch.float64))
        self.register_buffer("mean", torch.zeros((), dtype=torch.float64))
        self.register_buffer("std", torch.ones((), dtype=torch.float64))

    def forward(self, outputs):
        return self.weight * (as_tensor(outputs).reshape(-1) - self.mean) / self.std + self.bias

    def predict(self, outputs):
        with torch.no_grad():
            return (self(outputs) > 0).to(torch.long)


def train_readout(outputs, labels, epochs=2000, learning_rate=0.01):
    """
    Fit a LogisticReadout with full-batch Adam on BCE.

    Args:
        outputs: scalar system outputs (nA)
        labels: binary labels

    Returns:
        LogisticReadout
    """
    y = as_tensor(outputs).reshape(-1)
    readout = LogisticReadout()
    with torch.no_grad():
        readout.mean.copy_(y.mean())
        readout.std.copy_(torch.sqrt(y.var(correction=0) + 1e-12))
    params = [readout.weight, readout.bias]
    state = AdamState(params, AdamHyper(learning_rate=learning_rate))
    targets = as_tensor(labels).reshape(-1)
    for _ in range(epochs):
        loss = loss_bce_logits(readout(y), targets)
        adam_step(state, params, torch.autograd.grad(loss, params))
    return readout


def readout_accuracy(readout, outputs, labels):
    return float(np.mean(readout.predict(outputs).numpy() == np.asarray(labels).reshape(-1)))


@dataclass
class TrialReport:
    trial: int
    seed: int
    neg_fisher: float
    accuracy: float
    train_accuracy: float
    controls: list
    controls_in_range: bool
    network: object = None
    readout: object = None

    def row(self):
        return {"trial": self.trial, "neg_fisher": self.neg_fisher, "accuracy": self.accuracy,
                "train_accuracy": self.train_accuracy, "controls_in_range": int(self.controls_in_range)}


def build_network(system, surrogate, config=RingConfig(), seed=0):
    if system not in TOPOLOGIES:
        raise ContractError(f"Unknown ring system {system!r}, expected one of {sorted(TOPOLOGIES)}")
    return LayeredDnpuNetwork(surrogate, TOPOLOGIES[system], clip_width=config.clip_width, seed=seed,
                              noise_sigma_train=math.sqrt(config.noise_variance))


def eval_outputs(network, inputs):
    network.eval()
    with torch.no_grad():
        return network(as_tensor(inputs))


def train_two_stage(system, surrogate, train, test, config=RingConfig(), seed=0, trial=0):
    """
    Stage 1 trains the controls on the negative Fisher criterion with per-node
    output noise and then fixes the interlayer statistics on the noiseless
    training set; stage 2 freezes the controls and fits a logistic neuron on
    the standardized outputs.

    Args:
        system (str): 'single' or '2-2-1'
        surrogate (SurrogateModel): frozen surrogate
        train (RingDataset): training split
        test (RingDataset): test split
        config (RingConfig): training settings
        seed (int): trial seed

    Returns:
        TrialReport
    """
    network = build_network(system, surrogate, config, stream_seed(seed, 0))
    stage1 = ControlConfig(epochs=config.epochs, learning_rate=config.learning_rate, alpha=config.alpha,
                           noise_sigma=network.dnpu_nodes()[0].noise_sigma_train, seed=stream_seed(seed, 1))
    result = train_controls(network, train.inputs, train.labels, loss_neg_fisher, stage1)
    # interlayer statistics come from one noiseless pass over the whole training set
    network_forward(network, train.inputs, mode="train")

    train_outputs = eval_outputs(network, train.inputs)
    neg_fisher = loss_neg_fisher(train_outputs, train.labels).item()
    readout = train_readout(train_outputs, train.labels, config.stage2_epochs, config.stage2_learning_rate)
    test_outputs = eval_outputs(network, test.inputs)
    report = TrialReport(
        trial=trial, seed=seed, neg_fisher=neg_fisher,
        accuracy=readout_accuracy(readout, test_outputs, test.labels),
        train_accuracy=readout_accuracy(readout, train_outputs, train.labels),
        controls=[float(v) for c in result.controls for v in c],
        controls_in_range=result.controls_in_range, network=network, readout=readout,
    )
    logger.debug(f"{system} trial {trial}: neg-Fisher {neg_fisher:.4f}, test accuracy {report.accuracy:.4f}")
    return report


@dataclass
class SweepResult:
    system: str
    trials: list
    best: TrialReport

    def frame(self):
        return pd.DataFrame([t.row() for t in self.trials],
                            columns=["trial", "neg_fisher", "accuracy", "train_accuracy", "controls_in_range"])

    def best_document(self, task="rings"):
        nodes = self.best.network.dnpu_nodes()
        return {
            "system": self.system,
            "trial": self.best.trial,
            "seed": self.best.seed,
            "neg_fisher": self.best.neg_fisher,
            "accuracy": self.best.accuracy,
            "train_accuracy": self.best.train_accuracy,
            "nodes": [node_document(node, task) for node in nodes],
        }


def select_best(trials):
    """
    Highest test accuracy, ties to the more negative Fisher value, then the
    lower trial index. Trials whose controls ended in range rank above the rest.
    """
    return min(trials, key=lambda t: (not t.controls_in_range, -t.accuracy, t.neg_fisher, t.trial))


def trial_sweep(system, surrogate, train, test, config=RingConfig(), base_seed=0, n_trials=None, workers=1):
    """
    Independent seeded trials of train_two_stage; trial i uses base_seed XOR i.

    Returns:
        SweepResult
    """
    n_trials = config.n_trials if n_trials is None else n_trials
    if n_trials < 1:
        raise ContractError(f"n_trials must be >= 1, got {n_trials}")
    jobs = [(system, surrogate, train, test, config, job_seed(base_seed, i), i) for i in range(n_trials)]
    trials = run_jobs(train_two_stage, jobs, workers)
    best = select_best(trials)
    logger.info(f"{system} sweep of {n_trials} trials: best trial {best.trial} with test accuracy "
                f"{best.accuracy:.4f}, neg-Fisher {best.neg_fisher:.4f}")
    return SweepResult(system, trials, best)


def measure_network(device, network, inputs):
    """
    Evaluate a network on one device, node by node.

    Each node's controls are applied and every sample measured as one trace;
    the next layer receives the per-sample mean currents through the
    eval-mode interlayer maps.

    Returns:
        np.ndarray: (n, samples_per_point) output traces of the final node
    """
    network.eval()
    h = as_tensor(inputs)
    traces = None
    with torch.no_grad():
        for k, layer in enumerate(network.layers):
            if k > 0:
                h = network.maps[k - 1](h)
            layer_traces = [measure_sequence(device, node.assemble(h).numpy()) for node in layer]
            h = torch.from_numpy(np.stack([t.mean(axis=1) for t in layer_traces], axis=1))
            traces = layer_traces[-1]
    return traces


@dataclass
class ValidationResult:
    accuracies: list
    train_accuracies: list
    outputs: pd.DataFrame
    predictions: list = None  # per run, (n_test, 80) labels

    @property
    def mean_accuracy(self):
        return float(np.mean(self.accuracies))

    @property
    def std_accuracy(self):
        return float(np.std(self.accuracies))

    def runs_frame(self):
        return pd.DataFrame({"run": range(len(self.accuracies)), "accuracy": self.accuracies,
                             "train_accuracy": self.train_accuracies})


def time_multiplexed_validate(device, trial, train, test, runs=50, config=RingConfig(), seed=0):
    """
    Validate a trained trial on a device by time-multiplexing its nodes.

    Per run the training set is measured to refit the logistic neuron on the
    standardized output samples, then the test set is measured and every output
    sample classified.

    Args:
        device (SyntheticDevice): single-owner device session
        trial (TrialReport): trained network and readout
        train (RingDataset): measured to refit the readout
        test (RingDataset): measured for accuracy
        runs (int): repetitions
        config (RingConfig): stage-2 settings
        seed (int): device noise seed per run

    Returns:
        ValidationResult: per-run accuracies and the (sample, class, run, current_na) output table
    """
    if trial.network is None:
        raise ContractError("Validation needs a trained network")
    if not all(node.controls_in_range() for node in trial.network.dnpu_nodes()):
        raise ContractError(f"Trial {trial.trial} has controls outside their electrode ranges")
    accuracies, train_accuracies, frames, predictions = [], [], [], []
    for run in range(runs):
        device.reseed_noise(stream_seed(seed, run))
        train_traces = measure_network(device, trial.network, train.inputs)
        test_traces = measure_network(device, trial.network, test.inputs)
        per_point = train_traces.shape[1]
        train_labels = np.repeat(train.labels, per_point)
        test_labels = np.repeat(test.labels, per_point)
        readout = train_readout(train_traces.reshape(-1), train_labels, config.stage2_epochs,
                                config.stage2_learning_rate)
        predictions.append(readout.predict(test_traces.reshape(-1)).numpy().reshape(test_traces.shape))
        accuracies.append(readout_accuracy(readout, test_traces.reshape(-1), test_labels))
        train_accuracies.append(readout_accuracy(readout, train_traces.reshape(-1), train_labels))
        frames.append(pd.DataFrame({
            "sample": np.repeat(np.arange(len(test)), per_point),
            "class": test_labels,
            "run": run,
            "current_na": test_traces.reshape(-1),
        }))
        logger.debug(f"Validation run {run}: test accuracy {accuracies[-1]:.4f}")
    result = ValidationResult(accuracies, train_accuracies, pd.concat(frames, ignore_index=True), predictions)
    logger.info(f"Time-multiplexed validation over {runs} runs: accuracy {result.mean_accuracy:.4f} "
                f"+- {result.std_accuracy:.4f}")
    return result

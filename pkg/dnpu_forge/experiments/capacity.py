"""
Empirical capacity: for N fixed planar points, try to realize every one of the
2^N labellings with a system under an annealed output-noise retry schedule,
then confirm the found DNPU classifiers on a device.
"""

import copy
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import torch
from scipy.optimize import linprog

from dnpu_forge.models.decision import DecisionNode
from dnpu_forge.models.dense import DenseNetwork, arithmetic_operations, as_tensor, count_parameters
from dnpu_forge.models.device import measure_point
from dnpu_forge.models.dnpu import XOR_ASSIGNMENT, DnpuNode, ScalarClassifier, train_controls
from dnpu_forge.models.losses import loss_bce_logits
from dnpu_forge.models.optim import AdamHyper, AdamState, adam_step
from dnpu_forge.utils.config import CapacityConfig, ControlConfig
from dnpu_forge.utils.errors import ContractError, VoltageRangeError
from dnpu_forge.utils.jobs import run_jobs
from dnpu_forge.utils.seeding import job_seed, numpy_rng, stream_seed

logger = logging.getLogger(__name__)

CAPACITY_POINTS = (
    (-0.7, -0.7), (-0.7, 0.5), (0.5, -0.7), (0.5, 0.5), (-0.35, 0.0),
    (0.25, 0.0), (0.0, -0.35), (0.0, 0.25), (-1.1, 0.35), (0.35, -1.1),
)
MAX_ATTEMPTS = 15
DEVICE_SYSTEM = "dnpu-device"
BASELINE_HIDDEN = {"nn-2": 2, "nn-3": 3}


def capacity_points(n):
    """The first n points (V) of the fixed capacity point list, shape (n, 2)."""
    if isinstance(n, bool) or int(n) != n or not 1 <= n <= len(CAPACITY_POINTS):
        raise ContractError(f"N must lie in [1, {len(CAPACITY_POINTS)}], got {n}")
    return np.array(CAPACITY_POINTS[:int(n)], dtype=np.float64)


def labelings(n):
    """All 2^n binary labellings in counting order; bit j (MSB first) labels point j."""
    if n < 1:
        raise ContractError(f"N must be >= 1, got {n}")
    codes = np.arange(2 ** n)
    return ((codes[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.int64)


def labeling_string(labels):
    return "".join(str(int(b)) for b in labels)


def noise_schedule(attempt, initial_variance=1.0, attempts=MAX_ATTEMPTS):
    """Training-noise variance of an attempt: initial * prod_{k=1..attempt} (1 - k / attempts)."""
    if isinstance(attempt, bool) or int(attempt) != attempt or not 0 <= attempt < attempts:
        raise ContractError(f"attempt must lie in [0, {attempts - 1}], got {attempt}")
    variance = float(initial_variance)
    for k in range(1, int(attempt) + 1):
        variance *= 1.0 - k / attempts
    return variance


def baseline_nn(hidden, seed=0):
    """2 -> hidden logistic units -> 1 network feeding a DecisionNode."""
    if hidden not in (2, 3):
        raise ContractError(f"Baseline hidden width must be 2 or 3, got {hidden}")
    return ScalarClassifier(DenseNetwork([2, hidden, 1], activations=["logistic", "identity"], seed=seed))


def build_system(system, surrogate=None, seed=0):
    """Fresh classifier for a capacity system id."""
    if system == "dnpu-surrogate":
        if surrogate is None:
            raise ContractError("The dnpu-surrogate system needs a surrogate")
        return ScalarClassifier(DnpuNode(surrogate, XOR_ASSIGNMENT, seed=seed))
    if system in BASELINE_HIDDEN:
        return baseline_nn(BASELINE_HIDDEN[system], seed)
    if system == "linear-baseline":
        return ScalarClassifier(DenseNetwork([2, 1], seed=seed))
    raise ContractError(f"Unknown capacity system {system!r}")


def system_budget(system):
    """(learnable parameters, arithmetic operations) of a capacity system."""
    if system == "dnpu-surrogate":
        # controls plus the decision node's scale and shift
        return len(XOR_ASSIGNMENT.controls) + count_parameters(DecisionNode()), 2
    body = build_system(system).body
    return count_parameters(body), arithmetic_operations(body)


def accuracy(classifier, points, labels):
    predicted = classifier.predict(as_tensor(points)).numpy()
    return float(np.mean(predicted == np.asarray(labels)))


@dataclass
class LabelingResult:
    system: str
    n: int
    index: int
    labeling: str
    found: bool
    attempts: int
    accuracy: float
    parameters: list = field(default_factory=list)
    classifier: object = None

    def row(self):
        return {
            "system": self.system, "N": self.n, "labeling": self.labeling, "found": int(self.found),
            "attempts": self.attempts, "accuracy": self.accuracy,
            "parameters": " ".join(repr(float(p)) for p in self.parameters),
        }


def _trainable_values(classifier):
    return [float(v) for p in classifier.parameters() if p.requires_grad for v in p.detach().reshape(-1).tolist()]


def find_classifier(system, points, labels, surrogate=None, config=CapacityConfig(), seed=0):
    """
    Search for a classifier realizing one labelling.

    Each attempt is a full training run (BCE, full batch) with output noise of
    variance noise_schedule(attempt); the first attempt classifying every point
    correctly stops the search.

    Args:
        system (str): capacity system id
        points: (N, 2) points
        labels: N binary labels
        surrogate (SurrogateModel): needed by the DNPU system
        config (CapacityConfig): search protocol
        seed (int): job seed; attempts use sub-streams keyed by (N, attempt)

    Returns:
        LabelingResult: found flag, attempts used, accuracy and the classifier
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(points) != len(labels):
        raise ContractError(f"{len(points)} points but {len(labels)} labels")
    n = len(points)
    best = None
    for attempt in range(config.attempts):
        attempt_seed = stream_seed(seed, n, attempt)
        classifier = build_system(system, surrogate, attempt_seed)
        control = ControlConfig(
            epochs=config.epochs, learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
            alpha=config.alpha, noise_sigma=math.sqrt(noise_schedule(attempt, config.initial_noise_variance,
                                                                      config.attempts)),
            seed=attempt_seed,
        )
        train_controls(classifier, points, labels, loss_bce_logits, control)
        score = accuracy(classifier, points, labels)
        if best is None or score > best[0]:
            best = (score, classifier)
        if score == 1.0:
            logger.debug(f"{system} realized {labeling_string(labels)} on attempt {attempt}")
            return LabelingResult(system, n, -1, labeling_string(labels), True, attempt + 1, score,
                                  _trainable_values(classifier), classifier)
    return LabelingResult(system, n, -1, labeling_string(labels), False, config.attempts, best[0],
                          _trainable_values(best[1]), None)


def _search_job(system, n, index, surrogate, config, seed):
    result = find_classifier(system, capacity_points(n), labelings(n)[index], surrogate, config, seed)
    result.index = index
    return result


@dataclass
class CapacityReport:
    system: str
    results: list
    parameters: int = 0
    operations: int = 0

    def n_values(self):
        return sorted({r.n for r in self.results})

    def found(self, n):
        return sum(r.found for r in self.results if r.n == n)

    def capacity(self, n):
        return self.found(n) / 2 ** n

    def vc_dimension(self):
        """Largest evaluated N with every labelling realized, or None."""
        shattered = [n for n in self.n_values() if self.found(n) == 2 ** n]
        return max(shattered) if shattered else None

    def summary(self):
        return pd.DataFrame(
            [{"system": self.system, "N": n, "found": self.found(n), "C_N": self.capacity(n)} for n in self.n_values()],
            columns=["system", "N", "found", "C_N"],
        )

    def labeling_frame(self):
        return pd.DataFrame([r.row() for r in self.results],
                            columns=["system", "N", "labeling", "found", "attempts", "accuracy", "parameters"])


def capacity_curve(system, n_values, surrogate=None, config=CapacityConfig(), base_seed=0, workers=1):
    """
    Run the labelling search for every labelling of every N.

    Labelling i of size N is searched with seed base_seed XOR i.

    Returns:
        CapacityReport
    """
    for n in n_values:
        if not 4 <= n <= len(CAPACITY_POINTS):
            raise ContractError(f"Capacity N must lie in [4, {len(CAPACITY_POINTS)}], got {n}")
    jobs = [(system, n, i, surrogate, config, job_seed(base_seed, i)) for n in n_values for i in range(2 ** n)]
    logger.info(f"Capacity search for {system}: N in {list(n_values)}, {len(jobs)} labellings")
    results = run_jobs(_search_job, jobs, workers)
    parameters, operations = system_budget(system)
    report = CapacityReport(system, results, parameters, operations)
    for n in n_values:
        logger.info(f"{system} N={n}: found {report.found(n)}/{2 ** n}, C_N = {report.capacity(n):.4f}")
    return report


def validation_threshold(n):
    return 1.0 - 0.5 / n


def _measure_classifier(device, classifier, points):
    node = classifier.body
    with torch.no_grad():
        voltages = node.assemble(as_tensor(points)).numpy()
    return np.stack([measure_point(device, v).samples for v in voltages])


def retrain_decision(head, currents, labels, config):
    """Train only a DecisionNode on measured currents; returns the trained copy."""
    head = copy.deepcopy(head)
    head.train()
    x, y = as_tensor(currents), as_tensor(labels)
    params = [head.gamma, head.beta]
    state = AdamState(params, AdamHyper(config.validation_learning_rate, config.beta1, config.beta2))
    for _ in range(config.validation_epochs):
        loss = loss_bce_logits(head.logits(x), y)
        adam_step(state, params, torch.autograd.grad(loss, params))
    return head


def device_accuracy(device, classifier, points, labels, config=CapacityConfig(), seed=0):
    """
    Held-out accuracy of a found classifier on a device.

    Every point is measured (one trace each); the DecisionNode is retrained on
    a seeded train fraction of the samples and scored on the rest. Controls
    the device rejects score 0.
    """
    try:
        samples = _measure_classifier(device, classifier, points)
    except VoltageRangeError as e:
        logger.warning(f"Classifier not realizable on the device: {e}")
        return 0.0
    currents = samples.reshape(-1)
    sample_labels = np.repeat(np.asarray(labels), samples.shape[1])
    order = numpy_rng(seed).permutation(len(currents))
    cut = int(round(config.validation_train_fraction * len(currents)))
    train, held_out = order[:cut], order[cut:]
    head = retrain_decision(classifier.head, currents[train], sample_labels[train], config)
    predicted = head.predict(as_tensor(currents[held_out])).numpy()
    return float(np.mean(predicted == sample_labels[held_out]))


def validate_on_device(device, report, surrogate, config=CapacityConfig(), base_seed=0, workers=1):
    """
    Confirm the surrogate-found DNPU classifiers on a device.

    A classifier passes when its held-out accuracy exceeds 1 - 0.5 / N.
    Labellings that fail are searched again on the surrogate with a fresh
    attempt budget and validated again, config.retry_cycles times.

    Returns:
        CapacityReport: system 'dnpu-device'
    """
    device_results = []
    for result in report.results:
        device_results.append(replace(result, system=DEVICE_SYSTEM, found=False, classifier=None))
    pending = [k for k, r in enumerate(report.results) if r.found]
    candidates = {k: report.results[k] for k in pending}

    for cycle in range(config.retry_cycles + 1):
        failed = []
        for k in pending:
            result = candidates[k]
            if result is None or not result.found:
                failed.append(k)
                continue
            points = capacity_points(result.n)
            labels = labelings(result.n)[result.index]
            score = device_accuracy(device, result.classifier, points, labels, config,
                                    stream_seed(job_seed(base_seed, result.index), result.n, cycle))
            passed = score > validation_threshold(result.n)
            device_results[k] = replace(result, system=DEVICE_SYSTEM, found=passed, accuracy=score, classifier=None)
            if not passed:
                failed.append(k)
        logger.info(f"Device validation cycle {cycle}: {len(pending) - len(failed)} passed, {len(failed)} failed")
        if cycle == config.retry_cycles or not failed:
            break
        jobs = [(report.system, report.results[k].n, report.results[k].index, surrogate, config,
                 stream_seed(job_seed(base_seed, report.results[k].index), cycle + 1)) for k in failed]
        for k, result in zip(failed, run_jobs(_search_job, jobs, workers)):
            candidates[k] = result
        pending = failed

    return CapacityReport(DEVICE_SYSTEM, device_results, report.parameters, report.operations)


def linearly_separable(points, labels):
    """Whether some line separates the two classes, decided by a feasibility LP."""
    points = np.asarray(points, dtype=np.float64)
    signs = 2.0 * np.asarray(labels, dtype=np.float64) - 1.0
    augmented = np.hstack([points, np.ones((len(points), 1))])
    result = linprog(np.zeros(augmented.shape[1]), A_ub=-signs[:, None] * augmented, b_ub=-np.ones(len(points)),
                     bounds=[(None, None)] * augmented.shape[1], method="highs")
    return result.status == 0


def linear_capacity_oracle(n):
    """Number of labellings of the first n capacity points a single line realizes."""
    points = capacity_points(n)
    return sum(linearly_separable(points, labels) for labels in labelings(n))

"""Dispatch a RunConfig to its experiment and write every artifact into the run directory."""

import logging

import numpy as np
import pandas as pd

from dnpu_forge.experiments.capacity import capacity_curve, validate_on_device
from dnpu_forge.experiments.mnist import baseline_local_nn, confusion, train_mnist
from dnpu_forge.experiments.ring import time_multiplexed_validate, trial_sweep
from dnpu_forge.experiments.self_check import device_self_check
from dnpu_forge.models.device import DeviceSpec, SyntheticDevice, sample_io, save_io_dataset
from dnpu_forge.models.mnist import build_classifier
from dnpu_forge.models.surrogate import load_surrogate, rmse, save_surrogate, train_surrogate
from dnpu_forge.utils.config import mnist_directory
from dnpu_forge.utils.datasets import export_rings_csv, load_mnist, make_rings
from dnpu_forge.utils.reports import RunDirectory, histogram
from dnpu_forge.utils.seeding import stream_seed

logger = logging.getLogger(__name__)


def build_device(config):
    spec = DeviceSpec(noise_sigma=config.device.noise_sigma)
    return SyntheticDevice(spec, config.device.structure_seed, config.device.noise_seed)


def obtain_surrogate(config, device, run):
    """Load surrogate.checkpoint, or sample the device and train one inside the run."""
    if config.surrogate.checkpoint:
        logger.info(f"Loading surrogate from {config.surrogate.checkpoint}")
        return load_surrogate(config.surrogate.checkpoint)
    dataset = sample_io(device, config.sampling.n_samples, config.sampling.seed)
    surrogate, history = train_surrogate(dataset, config.surrogate, device.spec, provenance={
        "structure_seed": config.device.structure_seed,
        "noise_sigma": config.device.noise_sigma,
        "samples": config.sampling.n_samples,
        "sampling_seed": config.sampling.seed,
    })
    save_surrogate(run.file("surrogate.json"), surrogate)
    run.record("surrogate.json")
    run.write_csv("surrogate_history.csv", history)
    return surrogate


def run_sample(config, run, workers):
    device = build_device(config)
    train = sample_io(device, config.sampling.n_samples, config.sampling.seed)
    test = sample_io(device, config.sampling.test_samples, config.sampling.test_seed)
    save_io_dataset(run.file("samples_train.bin"), train)
    run.record("samples_train.bin")
    save_io_dataset(run.file("samples_test.bin"), test)
    run.record("samples_test.bin")
    run.write_json("sample_summary.json", {
        "train_samples": len(train), "test_samples": len(test),
        "current_min_na": float(train.currents.min()), "current_max_na": float(train.currents.max()),
        "current_mean_na": float(train.currents.mean()), "current_std_na": float(train.currents.std()),
    })
    return True


def run_train_surrogate(config, run, workers):
    device = build_device(config)
    surrogate = obtain_surrogate(config, device, run)
    test = sample_io(device, config.sampling.test_samples, config.sampling.test_seed)
    test_rmse, test_percent = rmse(surrogate, test)
    logger.info(f"Surrogate test RMSE {test_rmse:.3f} nA ({test_percent:.2f}% of the current range)")
    run.write_json("surrogate_metrics.json", {
        "validation_rmse_na": surrogate.fit_rmse, "test_rmse_na": test_rmse, "test_rmse_percent": test_percent,
    })
    return True


def _capacity_text(reports):
    lines = []
    for report in reports:
        lines.append(f"system {report.system} ({report.parameters} parameters, {report.operations} operations)")
        lines.extend(f"  N={n} found={report.found(n)} C_N={report.capacity(n):.6f}" for n in report.n_values())
        lines.extend(f"  {r.n} {r.labeling} attempts={r.attempts} accuracy={r.accuracy:.4f}" for r in report.results)
    return "\n".join(lines) + "\n"


def run_capacity(config, run, workers):
    device = build_device(config)
    needs_surrogate = "dnpu-surrogate" in config.capacity.systems
    surrogate = obtain_surrogate(config, device, run) if needs_surrogate else None
    reports = []
    for system in config.capacity.systems:
        report = capacity_curve(system, config.capacity.n_values, surrogate, config.capacity, config.seed, workers)
        reports.append(report)
        if system == "dnpu-surrogate" and config.capacity.validate_on_device:
            reports.append(validate_on_device(device, report, surrogate, config.capacity, config.seed, workers))
    run.write_csv("capacity_summary.csv", pd.concat([r.summary() for r in reports], ignore_index=True))
    run.write_csv("capacity_labelings.csv", pd.concat([r.labeling_frame() for r in reports], ignore_index=True))
    run.write_csv("capacity_budget.csv", pd.DataFrame(
        [{"system": r.system, "parameters": r.parameters, "operations": r.operations, "vc_dimension": r.vc_dimension()}
         for r in reports]))
    run.write_text("capacity_report.txt", _capacity_text(reports))
    return True


def run_ring(config, run, workers):
    ring = config.ring
    device = build_device(config)
    surrogate = obtain_surrogate(config, device, run)
    train, test = make_rings(ring.gap, ring.n_per_class, ring.data_seed)
    export_rings_csv(run.file("rings.csv"), train, test)
    run.record("rings.csv")
    summary = []
    for system in ring.systems:
        sweep = trial_sweep(system, surrogate, train, test, ring, config.seed, ring.n_trials, workers)
        frame = sweep.frame()
        run.write_csv(f"trials_{system}.csv", frame)
        run.write_csv(f"fisher_hist_{system}.csv", histogram(frame["neg_fisher"], ring.fisher_bin_width))
        run.write_csv(f"accuracy_hist_{system}.csv", histogram(frame["accuracy"], ring.accuracy_bin_width))
        run.write_json(f"best_{system}.json", sweep.best_document())
        row = {"system": system, "best_trial": sweep.best.trial, "best_accuracy": sweep.best.accuracy,
               "best_neg_fisher": sweep.best.neg_fisher, "validation_mean": np.nan, "validation_std": np.nan}
        if ring.validate and not sweep.best.controls_in_range:
            logger.warning(f"No {system} trial ended with every control in range; skipping device validation")
        elif ring.validate:
            result = time_multiplexed_validate(device, sweep.best, train, test, ring.validation_runs, ring,
                                               stream_seed(config.seed, 7))
            run.write_csv(f"validation_{system}.csv", result.outputs)
            run.write_csv(f"validation_runs_{system}.csv", result.runs_frame())
            row.update(validation_mean=result.mean_accuracy, validation_std=result.std_accuracy)
        summary.append(row)
    run.write_csv("ring_summary.csv", pd.DataFrame(summary))
    return True


def _confusion_frame(matrix):
    """Long form of a Confusion: one row per (true, predicted) cell with its count and row percentage."""
    counts = matrix.counts.to_numpy()
    percentages = matrix.percentages.to_numpy()
    return pd.DataFrame([{"true": t, "predicted": p, "count": int(counts[t, p]), "percent": float(percentages[t, p])}
                         for t in range(counts.shape[0]) for p in range(counts.shape[1])])


def run_mnist(config, run, workers):
    mnist = config.mnist
    device = build_device(config)
    surrogate = obtain_surrogate(config, device, run)
    data = load_mnist(mnist_directory(config), split_seed=mnist.split_seed).subset(
        mnist.train_size, mnist.validation_size, mnist.test_size)
    reports = []
    for width in mnist.receptive_widths:
        classifier = build_classifier(width, surrogate, seed=config.seed, logit_scale=mnist.logit_scale)
        reports.append(train_mnist(classifier, data, mnist, seed=config.seed))
        if mnist.baseline:
            reports.append(baseline_local_nn(width, data, mnist, seed=config.seed))
    for report in reports:
        tag = f"{report.model}_r{report.receptive_width}"
        matrix = confusion(report)
        run.write_csv(f"confusion_{tag}.csv", _confusion_frame(matrix))
        run.write_csv(f"top_confusions_{tag}.csv", matrix.top)
        run.write_csv(f"history_{tag}.csv", report.history)
    run.write_csv("mnist_summary.csv", pd.DataFrame([r.summary() for r in reports]))
    return True


def run_self_check(config, run, workers):
    report = device_self_check(config.device, config.self_check, config.capacity)
    run.write_json("self_check.json", report.summary())
    run.write_csv("self_check_surrogate_history.csv", report.history)
    return report.passed


EXPERIMENT_RUNNERS = {
    "sample": run_sample,
    "train-surrogate": run_train_surrogate,
    "capacity": run_capacity,
    "ring": run_ring,
    "mnist": run_mnist,
    "self-check": run_self_check,
}


def run_experiment(config, workers=None):
    """
    Run the configured experiment; the manifest is written only on completion.

    Args:
        config (RunConfig): validated config
        workers (int): overrides config.workers

    Returns:
        tuple: (RunDirectory, bool success)
    """
    workers = config.workers if workers is None else workers
    run = RunDirectory.create(config)
    logger.info(f"Starting {config.experiment} with seed {config.seed} on {workers} worker(s)")
    success = EXPERIMENT_RUNNERS[config.experiment](config, run, workers)
    run.finalize()
    logger.info(f"Finished {config.experiment}: {'success' if success else 'failure'}")
    return run, success

"""
Run directories and reports.

A run directory holds the resolved config snapshot, checkpoints and metrics
files, plus manifest.json listing every artifact with its SHA-256. The manifest
is written last, so its presence marks a completed run.
"""

import hashlib
import json
import logging
import math
import os
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from dnpu_forge.utils.config import config_from_dict, output_root, snapshot, snapshot_digest
from dnpu_forge.utils.errors import FormatError, IncompleteRunError

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CONFIG_SNAPSHOT = "config.yaml"
REPORT_DIR = "report"


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunDirectory:
    """Single-writer owner of one run's artifacts."""

    def __init__(self, path, experiment):
        self.path = Path(path)
        self.experiment = experiment
        self.artifacts = []

    @classmethod
    def create(cls, config):
        """Directory <experiment>-<sha256 of the config snapshot, 12 hex chars> under the output root."""
        path = output_root(config) / f"{config.experiment}-{snapshot_digest(config)[:12]}"
        path.mkdir(parents=True, exist_ok=True)
        stale = path / MANIFEST
        if stale.exists():
            stale.unlink()
        run = cls(path, config.experiment)
        run.write_text(CONFIG_SNAPSHOT, snapshot(config))
        logger.info(f"Run directory {path}")
        return run

    def file(self, name):
        return self.path / name

    def record(self, name):
        if name not in self.artifacts:
            self.artifacts.append(name)
        logger.debug(f"Recorded artifact {name}")
        return self.file(name)

    def write_text(self, name, text):
        self.file(name).write_text(text)
        return self.record(name)

    def write_csv(self, name, frame):
        frame.to_csv(self.file(name), index=False)
        return self.record(name)

    def write_json(self, name, document):
        return self.write_text(name, json.dumps(document, indent=1, sort_keys=True) + "\n")

    def finalize(self):
        """Write the manifest atomically after every other artifact."""
        manifest = {
            "experiment": self.experiment,
            "artifacts": [{"name": name, "sha256": file_digest(self.file(name))} for name in self.artifacts],
        }
        temporary = self.file(MANIFEST + ".tmp")
        temporary.write_text(json.dumps(manifest, indent=1) + "\n")
        os.replace(temporary, self.file(MANIFEST))
        logger.info(f"Run complete: {len(self.artifacts)} artifacts listed in {self.file(MANIFEST)}")
        return self.file(MANIFEST)


def open_run(path):
    """Manifest and config of a completed run; IncompleteRunError without a manifest."""
    path = Path(path)
    manifest_path = path / MANIFEST
    if not manifest_path.exists():
        raise IncompleteRunError(f"{path} has no {MANIFEST}; the run did not complete")
    try:
        manifest = json.loads(manifest_path.read_text())
        config = config_from_dict(yaml.safe_load((path / CONFIG_SNAPSHOT).read_text()))
    except (OSError, json.JSONDecodeError, yaml.YAMLError) as e:
        raise FormatError(path, f"unreadable run metadata: {e}") from e
    return manifest, config


def histogram(values, bin_width):
    """Counts over bins aligned to multiples of bin_width: (bin_left, bin_right, count)."""
    values = np.asarray(values, dtype=np.float64)
    low = math.floor(values.min() / bin_width)
    high = max(math.ceil(values.max() / bin_width), low + 1)
    edges = np.arange(low, high + 1) * bin_width
    # keep the extremes inside the outer bins despite rounding of k * bin_width
    edges[0] = min(edges[0], values.min())
    edges[-1] = max(edges[-1], values.max())
    counts, edges = np.histogram(values, bins=edges)
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})


def _artifacts(manifest, prefix, suffix=".csv"):
    return [a["name"] for a in manifest["artifacts"] if a["name"].startswith(prefix) and a["name"].endswith(suffix)]


def _stacked(path, names, prefix, column):
    """Concatenate CSVs, tagging rows with the part of the file name after prefix."""
    frames = []
    for name in names:
        frame = pd.read_csv(path / name)
        frame.insert(0, column, name[len(prefix):-len(".csv")])
        frames.append(frame)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def _capacity_report(path, manifest, config, out):
    curve = pd.read_csv(path / "capacity_summary.csv")
    curve.to_csv(out / "capacity_curve.csv", index=False)
    lines = ["Capacity curve (C_N = found / 2^N)"]
    for system, rows in curve.groupby("system", sort=False):
        shattered = rows.loc[rows["found"] == 2 ** rows["N"], "N"]
        vc = int(shattered.max()) if len(shattered) else None
        lines.append(f"  {system}: " + ", ".join(f"C_{n}={c:.4f}" for n, c in zip(rows["N"], rows["C_N"]))
                     + f" (all labellings realized up to N={vc})")
    return lines


def _ring_report(path, manifest, config, out):
    trials = _stacked(path, _artifacts(manifest, "trials_"), "trials_", "system")
    fisher, accuracy = [], []
    for system, rows in trials.groupby("system", sort=False):
        fisher.append(histogram(rows["neg_fisher"], config.ring.fisher_bin_width).assign(system=system))
        accuracy.append(histogram(rows["accuracy"], config.ring.accuracy_bin_width).assign(system=system))
    pd.concat(fisher, ignore_index=True).to_csv(out / "fisher_hist.csv", index=False)
    pd.concat(accuracy, ignore_index=True).to_csv(out / "accuracy_hist.csv", index=False)
    lines = ["Ring trial sweeps"]
    summary = pd.read_csv(path / "ring_summary.csv")
    for row in summary.itertuples():
        lines.append(f"  {row.system}: best test accuracy {row.best_accuracy:.4f}, "
                     f"best neg-Fisher {row.best_neg_fisher:.4f}")
        if row.validation_mean == row.validation_mean:
            lines.append(f"    device validation: {row.validation_mean:.4f} +- {row.validation_std:.4f}")
    outputs = _artifacts(manifest, "validation_", ".csv")
    outputs = [n for n in outputs if not n.startswith("validation_runs_")]
    if outputs:
        _stacked(path, outputs, "validation_", "system").to_csv(out / "output_distribution.csv", index=False)
    return lines


def _mnist_report(path, manifest, config, out):
    _stacked(path, _artifacts(manifest, "confusion_"), "confusion_", "model").to_csv(
        out / "confusion.csv", index=False)
    top = _stacked(path, _artifacts(manifest, "top_confusions_"), "top_confusions_", "model")
    top.to_csv(out / "top_confusions.csv", index=False)
    lines = ["MNIST"]
    for row in pd.read_csv(path / "mnist_summary.csv").itertuples():
        tag = f"{row.model}_r{row.receptive_width}"
        lines.append(f"  {row.model} R={row.receptive_width}: train {row.train_accuracy:.4f}, "
                     f"validation {row.validation_accuracy:.4f}, test {row.test_accuracy:.4f} "
                     f"({row.trainable_parameters} trainable parameters)")
        if len(top):
            rows = top[top["model"] == tag]
            for t, p, count, percent in zip(rows["true"], rows["predicted"], rows["count"], rows["percent"]):
                lines.append(f"    {t} read as {p}: {count} ({percent:.1f}%)")
    return lines


def _json_report(name, title):
    def build(path, manifest, config, out):
        document = json.loads((path / name).read_text())
        return [title] + [f"  {key}: {value}" for key, value in document.items()]
    return build


REPORTERS = {
    "capacity": _capacity_report,
    "ring": _ring_report,
    "mnist": _mnist_report,
    "self-check": _json_report("self_check.json", "Device self-check"),
    "train-surrogate": _json_report("surrogate_metrics.json", "Surrogate fit"),
    "sample": _json_report("sample_summary.json", "Device sampling"),
}


def report(run_path):
    """
    Write report/summary.txt and the plot-ready CSVs of a completed run.

    Args:
        run_path (str): run directory

    Returns:
        Path: the summary file
    """
    path = Path(run_path)
    manifest, config = open_run(path)
    out = path / REPORT_DIR
    out.mkdir(exist_ok=True)
    lines = [f"Experiment: {manifest['experiment']}", f"Artifacts: {len(manifest['artifacts'])}", ""]
    lines += REPORTERS[manifest["experiment"]](path, manifest, config, out)
    summary = out / "summary.txt"
    summary.write_text("\n".join(lines) + "\n")
    logger.info(f"Report written to {out}")
    return summary

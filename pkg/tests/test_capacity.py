import math

import numpy as np
import pytest
import torch

from dnpu_forge.experiments.capacity import (
    CapacityReport,
    LabelingResult,
    _measure_classifier,
    build_system,
    capacity_curve,
    capacity_points,
    device_accuracy,
    find_classifier,
    labeling_string,
    labelings,
    linear_capacity_oracle,
    linearly_separable,
    noise_schedule,
    system_budget,
    validate_on_device,
    validation_threshold,
)
from dnpu_forge.utils.config import CapacityConfig
from dnpu_forge.utils.errors import ContractError

QUICK = CapacityConfig(attempts=15, epochs=300, learning_rate=0.05)


def test_capacity_points_prefixes():
    assert capacity_points(4).tolist() == [[-0.7, -0.7], [-0.7, 0.5], [0.5, -0.7], [0.5, 0.5]]
    assert capacity_points(10).shape == (10, 2)
    with pytest.raises(ContractError):
        capacity_points(11)


def test_labelings_count_in_binary_with_point_zero_first():
    rows = labelings(4)
    assert rows.shape == (16, 4)
    assert labeling_string(rows[1]) == "0001"
    assert labeling_string(rows[6]) == "0110"
    assert labeling_string(rows[8]) == "1000"


def test_noise_schedule():
    assert noise_schedule(0) == 1.0
    assert noise_schedule(1) == pytest.approx(14 / 15)
    assert noise_schedule(2) == pytest.approx(14 / 15 * 13 / 15)
    assert noise_schedule(2, initial_variance=2.0) == pytest.approx(2 * 14 / 15 * 13 / 15)
    with pytest.raises(ContractError):
        noise_schedule(15)


def test_noise_schedule_reaches_the_factorial_floor():
    variances = [noise_schedule(n) for n in range(15)]
    assert variances[14] == pytest.approx(math.factorial(14) / 15 ** 14, rel=0, abs=1e-12)
    assert all(a > b for a, b in zip(variances, variances[1:]))


@pytest.mark.parametrize("system,budget", [
    ("dnpu-surrogate", (7, 2)), ("nn-2", (9, 12)), ("nn-3", (13, 18)), ("linear-baseline", (3, 4)),
])
def test_system_budgets(system, budget):
    assert system_budget(system) == budget


def test_unknown_system():
    with pytest.raises(ContractError):
        build_system("svm")


def test_dnpu_system_needs_a_surrogate():
    with pytest.raises(ContractError):
        build_system("dnpu-surrogate")


def test_xor_square_is_not_linearly_separable():
    points = capacity_points(4)
    separable = [linearly_separable(points, labels) for labels in labelings(4)]
    assert [i for i, ok in enumerate(separable) if not ok] == [6, 9]
    assert linear_capacity_oracle(4) == 14


def test_linear_baseline_realizes_and():
    result = find_classifier("linear-baseline", capacity_points(4), [0, 0, 0, 1], config=QUICK, seed=1)
    assert result.found
    assert result.accuracy == 1.0
    assert len(result.parameters) == 5


def test_linear_baseline_never_realizes_xor():
    config = CapacityConfig(attempts=2, epochs=50)
    result = find_classifier("linear-baseline", capacity_points(4), [0, 1, 1, 0], config=config, seed=1)
    assert not result.found
    assert result.attempts == 2
    assert result.classifier is None
    assert result.accuracy <= 0.75


def test_search_is_deterministic_for_a_seed(surrogate):
    config = CapacityConfig(attempts=1, epochs=20)
    first = find_classifier("dnpu-surrogate", capacity_points(4), [0, 1, 1, 0], surrogate, config, seed=9)
    second = find_classifier("dnpu-surrogate", capacity_points(4), [0, 1, 1, 0], surrogate, config, seed=9)
    assert first.parameters == second.parameters
    assert first.accuracy == second.accuracy


def test_mismatched_labels():
    with pytest.raises(ContractError):
        find_classifier("linear-baseline", capacity_points(4), [0, 1], config=QUICK)


def test_capacity_curve_needs_at_least_four_points():
    with pytest.raises(ContractError):
        capacity_curve("linear-baseline", [3])


def test_report_capacity_and_vc_dimension():
    results = [LabelingResult("x", 4, i, labeling_string(labels), i not in (6, 9), 1, 1.0)
               for i, labels in enumerate(labelings(4))]
    report = CapacityReport("x", results, 3, 4)
    assert report.found(4) == 14
    assert report.capacity(4) == pytest.approx(0.875)
    assert report.vc_dimension() is None
    assert report.summary().to_dict("records") == [{"system": "x", "N": 4, "found": 14, "C_N": 0.875}]
    assert len(report.labeling_frame()) == 16


def test_validation_threshold():
    assert validation_threshold(4) == 0.875
    assert validation_threshold(10) == 0.95


def _constant_classifier(surrogate, label, seed):
    classifier = build_system("dnpu-surrogate", surrogate, seed)
    with torch.no_grad():
        classifier.head.beta.fill_(5.0 if label else -5.0)
    return classifier


def test_noiseless_device_reproduces_surrogate_currents(surrogate, surrogate_device):
    classifier = build_system("dnpu-surrogate", surrogate, seed=2)
    points = capacity_points(6)
    samples = _measure_classifier(surrogate_device, classifier, points)
    assert samples.shape == (6, 80)
    expected = classifier.scores(points).detach().numpy()
    assert np.allclose(samples, expected[:, None], rtol=0, atol=1e-9)


def test_validate_on_device_confirms_constant_labelings(surrogate, surrogate_device):
    results = [
        LabelingResult("dnpu-surrogate", 4, 0, "0000", True, 1, 1.0, [], _constant_classifier(surrogate, 0, 1)),
        LabelingResult("dnpu-surrogate", 4, 6, "0110", False, 15, 0.75, [], None),
        LabelingResult("dnpu-surrogate", 4, 15, "1111", True, 1, 1.0, [], _constant_classifier(surrogate, 1, 2)),
    ]
    report = CapacityReport("dnpu-surrogate", results, 7, 2)
    config = CapacityConfig(validation_epochs=100, retry_cycles=0)
    validated = validate_on_device(surrogate_device, report, surrogate, config)
    assert validated.system == "dnpu-device"
    assert [r.found for r in validated.results] == [True, False, True]
    assert validated.found(4) <= report.found(4)
    assert validated.parameters == 7


def test_out_of_range_controls_fail_device_validation(surrogate, surrogate_device):
    classifier = _constant_classifier(surrogate, 0, 3)
    with torch.no_grad():
        classifier.body.control_voltages[0] = 0.9
    assert device_accuracy(surrogate_device, classifier, capacity_points(4), [0, 0, 0, 0]) == 0.0


@pytest.mark.slow
def test_linear_capacity_curve_respects_the_line_bound():
    report = capacity_curve("linear-baseline", [4], config=CapacityConfig(attempts=5, epochs=600), base_seed=0)
    assert 12 <= report.found(4) <= linear_capacity_oracle(4)
    assert report.vc_dimension() is None


@pytest.mark.slow
def test_capacity_curve_does_not_depend_on_workers():
    config = CapacityConfig(attempts=2, epochs=100)
    serial = capacity_curve("nn-2", [4], config=config, base_seed=3, workers=1)
    parallel = capacity_curve("nn-2", [4], config=config, base_seed=3, workers=2)
    assert serial.labeling_frame().equals(parallel.labeling_frame())


@pytest.mark.slow
def test_dnpu_surrogate_realizes_every_labelling_of_four_points(fitted_surrogate):
    report = capacity_curve("dnpu-surrogate", [4], fitted_surrogate, base_seed=0, workers=4)
    assert report.capacity(4) == 1.0
    assert report.vc_dimension() == 4


@pytest.mark.slow
def test_wider_baseline_realizes_at_least_as_many_labellings():
    narrow = capacity_curve("nn-2", [4, 5, 6], base_seed=0, workers=4)
    wide = capacity_curve("nn-3", [4, 5, 6], base_seed=0, workers=4)
    for n in (4, 5, 6):
        assert wide.found(n) >= narrow.found(n)

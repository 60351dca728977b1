import math

import numpy as np
import pytest
import torch

from dnpu_forge.models.losses import (
    class_statistics,
    loss_bce,
    loss_bce_logits,
    loss_cross_entropy,
    loss_mse,
    loss_neg_fisher,
)
from dnpu_forge.utils.errors import DegenerateBatchError, DomainError


def test_mse():
    assert float(loss_mse([1.0, 2.0, 3.0], [1.0, 2.0, 5.0])) == pytest.approx(4.0 / 3.0)


def test_bce_matches_closed_form():
    value = loss_bce([0.8, 0.3], [1.0, 0.0])
    expected = -(math.log(0.8) + math.log(0.7)) / 2
    assert float(value) == pytest.approx(expected)


@pytest.mark.parametrize("prob", [0.0, 1.0, -0.1])
def test_bce_rejects_saturated_probabilities(prob):
    with pytest.raises(DomainError):
        loss_bce([prob, 0.5], [1.0, 0.0])


def test_bce_logits_agrees_with_bce():
    logits = torch.tensor([-2.0, 0.5, 3.0], dtype=torch.float64)
    labels = [0.0, 1.0, 1.0]
    assert float(loss_bce_logits(logits, labels)) == pytest.approx(float(loss_bce(torch.sigmoid(logits), labels)))


def test_cross_entropy_of_uniform_logits_is_log_classes():
    assert float(loss_cross_entropy(np.zeros((4, 10)), [0, 3, 5, 9])) == pytest.approx(math.log(10))


def test_cross_entropy_single_row():
    value = loss_cross_entropy(np.array([0.0, math.log(3.0)]), 1)
    assert float(value) == pytest.approx(math.log(4.0 / 3.0))


def test_cross_entropy_rejects_non_finite():
    with pytest.raises(DomainError):
        loss_cross_entropy(np.array([[0.0, np.inf]]), [0])


def test_neg_fisher_known_value():
    outputs = [0.0, 2.0, 4.0, 6.0]
    labels = [0, 0, 1, 1]
    # mu0=1, mu1=5, var0=var1=1
    assert float(loss_neg_fisher(outputs, labels)) == pytest.approx(-16.0 / (2.0 + 1e-8))


def test_class_statistics_population_variance():
    mu0, var0, mu1, var1 = class_statistics([1.0, 3.0, 10.0], [0, 0, 1])
    assert (float(mu0), float(var0), float(mu1), float(var1)) == (2.0, 1.0, 10.0, 0.0)


def test_neg_fisher_needs_both_classes():
    with pytest.raises(DegenerateBatchError):
        loss_neg_fisher([1.0, 2.0], [1, 1])


@pytest.mark.parametrize("scale,shift", [(-1.0, 0.0), (1.0, 17.0), (-1.0, -3.5)])
def test_neg_fisher_is_invariant_to_sign_and_shift(scale, shift):
    rng = np.random.default_rng(2)
    outputs = rng.normal(size=40)
    labels = rng.integers(0, 2, 40)
    labels[:2] = [0, 1]
    base = float(loss_neg_fisher(outputs, labels))
    assert float(loss_neg_fisher(scale * outputs + shift, labels)) == pytest.approx(base, rel=1e-9)


def test_neg_fisher_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    outputs = torch.tensor(rng.normal(size=10), requires_grad=True)
    labels = np.array([0, 1] * 5)
    (analytic,) = torch.autograd.grad(loss_neg_fisher(outputs, labels), outputs)
    step = 1e-6
    base = outputs.detach().numpy()
    for i in range(10):
        plus, minus = base.copy(), base.copy()
        plus[i] += step
        minus[i] -= step
        numeric = (float(loss_neg_fisher(plus, labels)) - float(loss_neg_fisher(minus, labels))) / (2 * step)
        assert float(analytic[i]) == pytest.approx(numeric, rel=1e-5, abs=1e-8)

import math

import pytest
import torch

from dnpu_forge.models.optim import AdamHyper, AdamState, adam_step
from dnpu_forge.utils.errors import ContractError, NumericError


def _parameter(values):
    return torch.nn.Parameter(torch.tensor(values, dtype=torch.float64))


def test_first_step_moves_each_coordinate_by_the_learning_rate():
    weight = _parameter([1.0, -2.0, 0.5])
    state = AdamState([weight], AdamHyper(learning_rate=0.01))
    adam_step(state, [weight], [torch.tensor([3.0, -0.2, 1e-3], dtype=torch.float64)])
    assert torch.allclose(weight.detach(), torch.tensor([0.99, -1.99, 0.49], dtype=torch.float64), atol=1e-7)
    assert state.step_count == 1


def test_matches_reference_update_over_several_steps():
    hyper = AdamHyper(learning_rate=0.05, beta1=0.8, beta2=0.95, epsilon=1e-8)
    weight = _parameter([0.3])
    state = AdamState([weight], hyper)
    value, m, v = 0.3, 0.0, 0.0
    for t, g in enumerate([0.5, -1.0, 2.0, 0.1], start=1):
        adam_step(state, [weight], [torch.tensor([g], dtype=torch.float64)])
        m = hyper.beta1 * m + (1 - hyper.beta1) * g
        v = hyper.beta2 * v + (1 - hyper.beta2) * g * g
        m_hat, v_hat = m / (1 - hyper.beta1 ** t), v / (1 - hyper.beta2 ** t)
        value -= hyper.learning_rate * m_hat / (math.sqrt(v_hat) + hyper.epsilon)
        assert float(weight) == pytest.approx(value, rel=1e-12)
    assert float(state.first_moment[0]) == pytest.approx(m)
    assert float(state.second_moment[0]) == pytest.approx(v)


def test_decoupled_weight_decay_shrinks_without_gradient():
    weight = _parameter([2.0])
    state = AdamState([weight], AdamHyper(learning_rate=0.1, weight_decay=0.5))
    adam_step(state, [weight], [torch.zeros(1, dtype=torch.float64)])
    assert float(weight) == pytest.approx(2.0 * (1 - 0.1 * 0.5))


def test_non_finite_gradient_names_the_parameter():
    a, b = _parameter([1.0]), _parameter([1.0, 2.0])
    state = AdamState([a, b])
    with pytest.raises(NumericError) as info:
        adam_step(state, [a, b], [torch.zeros(1, dtype=torch.float64), torch.tensor([0.0, math.nan])])
    assert info.value.parameter_index == 1
    assert float(a) == 1.0


def test_gradient_shape_mismatch():
    weight = _parameter([1.0, 2.0])
    state = AdamState([weight])
    with pytest.raises(ContractError):
        adam_step(state, [weight], [torch.zeros(3, dtype=torch.float64)])


def test_foreign_parameters_are_rejected():
    weight, other = _parameter([1.0]), _parameter([1.0])
    state = AdamState([weight])
    with pytest.raises(ContractError):
        adam_step(state, [other], [torch.zeros(1, dtype=torch.float64)])


def test_empty_parameter_list():
    with pytest.raises(ContractError):
        AdamState([])

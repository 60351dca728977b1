import numpy as np
import pytest
import torch

from dnpu_forge.models.dense import (
    DenseNetwork,
    arithmetic_operations,
    count_parameters,
    forward,
    gradient,
)
from dnpu_forge.utils.errors import ContractError, FormatError, InputShapeError


def _relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)


def _objective(net, inputs, upstream):
    return float((forward(net, inputs) * torch.as_tensor(upstream)).sum())


@pytest.fixture
def tanh_net():
    return DenseNetwork([3, 5, 4, 2], ["tanh", "logistic", "identity"], seed=1)


@pytest.fixture
def batch():
    rng = np.random.default_rng(0)
    return rng.uniform(-1, 1, (6, 3)), rng.normal(size=(6, 2))


def test_forward_shape_and_dtype(tanh_net, batch):
    inputs, _ = batch
    outputs = forward(tanh_net, inputs)
    assert outputs.shape == (6, 2)
    assert outputs.dtype == torch.float64


def test_forward_rejects_wrong_width(tanh_net):
    with pytest.raises(InputShapeError):
        forward(tanh_net, np.zeros((4, 2)))


def test_default_activations_are_hidden_then_identity():
    net = DenseNetwork([2, 3, 1])
    assert net.activations == ["relu", "identity"]


def test_rejects_unknown_activation():
    with pytest.raises(ContractError):
        DenseNetwork([2, 1], ["softsign"])


def test_same_seed_same_weights():
    a = DenseNetwork([7, 8, 1], seed=4)
    b = DenseNetwork([7, 8, 1], seed=4)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)


def test_parameter_gradient_matches_finite_differences(tanh_net, batch):
    inputs, upstream = batch
    grads = gradient(tanh_net, inputs, upstream)
    step = 1e-6
    for name, parameter in tanh_net.named_parameters():
        numeric = torch.zeros_like(parameter)
        flat = parameter.data.view(-1)
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + step
            plus = _objective(tanh_net, inputs, upstream)
            flat[i] = original - step
            minus = _objective(tanh_net, inputs, upstream)
            flat[i] = original
            numeric.view(-1)[i] = (plus - minus) / (2 * step)
        assert _relative_error(grads.parameters[name], numeric) < 1e-6, name


def test_input_gradient_for_designated_coordinates(tanh_net, batch):
    inputs, upstream = batch
    tanh_net.designate_inputs([0, 2])
    grads = gradient(tanh_net, inputs, upstream, input_coordinates=[0, 2])
    assert grads.inputs.shape == (6, 2)
    step = 1e-6
    for column, coordinate in enumerate([0, 2]):
        shifted = inputs.copy()
        shifted[:, coordinate] += step
        plus = forward(tanh_net, shifted)
        shifted[:, coordinate] -= 2 * step
        minus = forward(tanh_net, shifted)
        numeric = ((plus - minus) / (2 * step) * torch.as_tensor(upstream)).sum(dim=1)
        assert _relative_error(grads.inputs[:, column], numeric) < 1e-6


def test_undesignated_input_gradient_is_refused(tanh_net, batch):
    inputs, upstream = batch
    tanh_net.designate_inputs([0])
    with pytest.raises(ContractError):
        gradient(tanh_net, inputs, upstream, input_coordinates=[1])


def test_frozen_network_reports_no_parameter_gradients(tanh_net, batch):
    inputs, upstream = batch
    tanh_net.freeze()
    assert gradient(tanh_net, inputs, upstream).parameters == {}
    assert count_parameters(tanh_net, trainable_only=True) == 0


def test_parameter_and_operation_counts():
    net = DenseNetwork([2, 3, 1], ["logistic", "identity"])
    assert count_parameters(net) == 13
    assert arithmetic_operations(net) == 2 * (2 * 3 + 3 * 1)


def test_document_round_trip_is_exact(tanh_net, batch):
    inputs, _ = batch
    restored = DenseNetwork.from_document(tanh_net.to_document())
    assert torch.equal(forward(restored, inputs), forward(tanh_net, inputs))


def test_document_version_mismatch():
    document = DenseNetwork([2, 1]).to_document()
    document["format_version"] = 99
    with pytest.raises(FormatError):
        DenseNetwork.from_document(document)

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from dnpu_forge.utils.errors import ContractError, FormatError
from dnpu_forge.utils.validators import validate_width

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


def _identity(x):
    return x


ACTIVATIONS = {
    "relu": torch.relu,
    "logistic": torch.sigmoid,
    "tanh": torch.tanh,
    "identity": _identity,
}


def as_tensor(values):
    """Convert array-likes to a float64 CPU tensor (no copy for float64 tensors)."""
    if isinstance(values, torch.Tensor):
        return values.to(torch.float64)
    return torch.as_tensor(np.asarray(values, dtype=np.float64))


class DenseNetwork(nn.Module):
    """
    Fixed-topology feed-forward network in float64.

    Layer k maps layer_sizes[k] -> layer_sizes[k+1] through an nn.Linear
    (weight shape fan_out x fan_in) followed by activations[k].

    Args:
        layer_sizes (list[int]): widths from input to output
        activations (list[str]): one tag per layer from ACTIVATIONS; defaults to
            hidden_activation everywhere and identity on the last layer
        seed (int): seed for the uniform +-sqrt(6 / (fan_in + fan_out)) init
        hidden_activation (str): tag used for hidden layers when activations is None
    """

    def __init__(self, layer_sizes, activations=None, seed=0, hidden_activation="relu"):
        super().__init__()
        if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
            raise ContractError(f"layer_sizes must hold >= 2 positive integers, got {layer_sizes}")
        self.layer_sizes = [int(s) for s in layer_sizes]
        n_layers = len(self.layer_sizes) - 1
        if activations is None:
            activations = [hidden_activation] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise ContractError(f"Need {n_layers} activation tags, got {len(activations)}")
        unknown = [a for a in activations if a not in ACTIVATIONS]
        if unknown:
            raise ContractError(f"Unknown activation tags: {unknown}")
        self.activations = list(activations)
        self.layers = nn.ModuleList(
            nn.Linear(fan_in, fan_out, dtype=torch.float64)
            for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )
        self.trainable_inputs = frozenset()
        self.reset_parameters(seed)

    def reset_parameters(self, seed):
        generator = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for layer in self.layers:
                bound = math.sqrt(6.0 / (layer.in_features + layer.out_features))
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.zero_()

    @classmethod
    def from_arrays(cls, weights, biases, activations):
        """Build a network with explicit weights (list of fan_out x fan_in arrays) and biases."""
        weights = [as_tensor(w) for w in weights]
        sizes = [weights[0].shape[1]] + [w.shape[0] for w in weights]
        net = cls(sizes, activations)
        with torch.no_grad():
            for layer, w, b in zip(net.layers, weights, biases):
                if tuple(w.shape) != tuple(layer.weight.shape):
                    raise ContractError(f"Weight shape {tuple(w.shape)} breaks the layer chain {sizes}")
                layer.weight.copy_(w)
                layer.bias.copy_(as_tensor(b).reshape(layer.bias.shape))
        return net

    @property
    def input_size(self):
        return self.layer_sizes[0]

    @property
    def output_size(self):
        return self.layer_sizes[-1]

    def freeze(self):
        """Clear the trainable mask on every internal parameter."""
        for parameter in self.parameters():
            parameter.requires_grad_(False)
        return self

    def designate_inputs(self, coordinates):
        """Mark input coordinates whose gradients may be requested."""
        coordinates = frozenset(int(c) for c in coordinates)
        if any(c < 0 or c >= self.input_size for c in coordinates):
            raise ContractError(f"Input coordinates {sorted(coordinates)} outside [0, {self.input_size})")
        self.trainable_inputs = coordinates
        return self

    def forward(self, x):
        validate_width(x, self.input_size)
        for layer, tag in zip(self.layers, self.activations):
            x = ACTIVATIONS[tag](layer(x))
        return x

    def to_document(self):
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "activations": list(self.activations),
            "weights": [layer.weight.detach().tolist() for layer in self.layers],
            "biases": [layer.bias.detach().tolist() for layer in self.layers],
        }

    @classmethod
    def from_document(cls, document, source="<document>"):
        if document.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise FormatError(source, f"unsupported format_version {document.get('format_version')!r}")
        try:
            net = cls.from_arrays(document["weights"], document["biases"], document["activations"])
        except (KeyError, IndexError, ContractError) as e:
            raise FormatError(source, f"malformed network document: {e}") from e
        if net.layer_sizes != list(document["layer_sizes"]):
            raise FormatError(source, "layer_sizes disagree with the weight shapes")
        return net


@dataclass
class Gradients:
    """Result of gradient(): one entry per trainable parameter, plus designated inputs."""

    parameters: dict = field(default_factory=dict)
    inputs: torch.Tensor = None


def forward(net, inputs):
    """
    Evaluate the network on a batch.

    Args:
        net (DenseNetwork): network to evaluate
        inputs: array of shape (batch, layer_sizes[0])

    Returns:
        torch.Tensor: outputs of shape (batch, layer_sizes[-1])
    """
    with torch.no_grad():
        return net(as_tensor(inputs))


def gradient(net, inputs, upstream, input_coordinates=()):
    """
    Back-propagate an upstream loss gradient through the network.

    Args:
        net (DenseNetwork): network with its trainable mask set
        inputs: batch of input vectors
        upstream: dL/d(output), same shape as the network output
        input_coordinates: input coordinates to return gradients for; each must
            have been designated with net.designate_inputs

    Returns:
        Gradients: parameters maps parameter name -> gradient for every parameter
        with requires_grad; inputs holds (batch, len(input_coordinates)) gradients
    """
    coordinates = [int(c) for c in input_coordinates]
    undesignated = sorted(set(coordinates) - net.trainable_inputs)
    if undesignated:
        raise ContractError(f"Input coordinates {undesignated} are not designated trainable")
    x = as_tensor(inputs).detach().clone().requires_grad_(bool(coordinates))
    named = [(name, p) for name, p in net.named_parameters() if p.requires_grad]
    targets = [p for _, p in named] + ([x] if coordinates else [])
    result = Gradients()
    if not targets:
        return result
    with torch.enable_grad():
        output = net(x)
        grads = torch.autograd.grad(output, targets, grad_outputs=as_tensor(upstream).reshape(output.shape),
                                    allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(targets, grads)]
    result.parameters = {name: g for (name, _), g in zip(named, grads)}
    if coordinates:
        result.inputs = grads[-1][:, coordinates]
    return result


def count_parameters(module, trainable_only=False):
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def arithmetic_operations(net):
    """Multiplies plus adds of the affine maps (bias add included, non-linearities not)."""
    return sum(2 * layer.in_features * layer.out_features for layer in net.layers)

import logging
import math

import torch
from torch import nn

from dnpu_forge.models.dense import as_tensor
from dnpu_forge.models.dnpu import DnpuNode, ElectrodeAssignment, dnpu_nodes
from dnpu_forge.utils.errors import ContractError
from dnpu_forge.utils.seeding import stream_seed
from dnpu_forge.utils.validators import validate_width

logger = logging.getLogger(__name__)

N_CLASSES = 10
N_PIXELS = 784
PIXEL_RANGE = (-0.5, 0.5)
DEFAULT_LOGIT_SCALE = 0.01  # 1/nA

ASSIGNMENTS = {
    3: ElectrodeAssignment((0, 3, 4), (1, 2, 5, 6)),
    7: ElectrodeAssignment(tuple(range(7)), ()),
}


def _check_width(receptive_width):
    if receptive_width not in ASSIGNMENTS:
        raise ContractError(f"Receptive width must be one of {sorted(ASSIGNMENTS)}, got {receptive_width}")
    return receptive_width


def _seeded_linear(fan_in, fan_out, bias, seed):
    layer = nn.Linear(fan_in, fan_out, bias=bias, dtype=torch.float64)
    generator = torch.Generator().manual_seed(int(seed))
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        if bias:
            layer.bias.zero_()
    return layer


def check_images(images):
    images = validate_width(as_tensor(images), N_PIXELS, "images")
    low, high = PIXEL_RANGE
    if images.numel() and not bool(((images >= low) & (images <= high)).all()):
        raise ContractError(f"Images must be standardized to [{low}, {high}]")
    return images


class SingleLayerDnpuClassifier(nn.Module):
    """
    Bias-free linear layer 784 -> 10R feeding ten DNPU nodes, one per class.

    Node k reads linear outputs [kR, kR + R) on its data electrodes; its
    current times logit_scale is the class-k logit.
    """

    def __init__(self, surrogate, receptive_width=3, logit_scale=DEFAULT_LOGIT_SCALE, seed=0):
        super().__init__()
        self.receptive_width = _check_width(receptive_width)
        self.logit_scale = float(logit_scale)
        self.surrogate = surrogate
        assignment = ASSIGNMENTS[receptive_width]
        self.linear = _seeded_linear(N_PIXELS, N_CLASSES * receptive_width, False, stream_seed(seed, 0))
        self.nodes = nn.ModuleList(
            DnpuNode(surrogate, assignment, seed=stream_seed(seed, k + 1)) for k in range(N_CLASSES)
        )

    def dnpu_nodes(self):
        return dnpu_nodes(self)

    def currents(self, images):
        h = self.linear(as_tensor(images)).reshape(-1, N_CLASSES, self.receptive_width)
        voltages = torch.stack([node.assemble(h[:, k, :]) for k, node in enumerate(self.nodes)], dim=1)
        return self.surrogate(voltages.reshape(-1, voltages.shape[-1])).reshape(-1, N_CLASSES)

    def forward(self, images):
        return self.currents(images) * self.logit_scale

    def weight_penalty(self, factor):
        """L2 term 0.5 * factor * ||W||^2 on the linear weights."""
        return 0.5 * factor * (self.linear.weight ** 2).sum()


class LocalReceptiveNet(nn.Module):
    """
    Conventional counterpart: 784 -> 10R ReLU units (with bias), then ten output
    neurons, neuron k reading hidden units [kR, kR + R) with its own bias.
    """

    def __init__(self, receptive_width=3, seed=0):
        super().__init__()
        self.receptive_width = _check_width(receptive_width)
        self.hidden = _seeded_linear(N_PIXELS, N_CLASSES * receptive_width, True, stream_seed(seed, 0))
        generator = torch.Generator().manual_seed(stream_seed(seed, 1))
        bound = math.sqrt(6.0 / (receptive_width + 1))
        self.output_weight = nn.Parameter(
            (torch.rand(N_CLASSES, receptive_width, generator=generator, dtype=torch.float64) * 2 - 1) * bound
        )
        self.output_bias = nn.Parameter(torch.zeros(N_CLASSES, dtype=torch.float64))

    def dnpu_nodes(self):
        return []

    def forward(self, images):
        h = torch.relu(self.hidden(as_tensor(images))).reshape(-1, N_CLASSES, self.receptive_width)
        return (h * self.output_weight).sum(dim=-1) + self.output_bias

    def output_operations_per_node(self):
        """Multiplies plus adds of one output neuron, bias and non-linearity not counted."""
        return 2 * self.receptive_width

    def weight_penalty(self, factor):
        return 0.5 * factor * (self.hidden.weight ** 2).sum()


def build_classifier(receptive_width, surrogate, seed=0, logit_scale=DEFAULT_LOGIT_SCALE):
    """
    Single-layer DNPU classifier sharing one frozen surrogate.

    Args:
        receptive_width (int): 3 (controls on e1, e2, e5, e6) or 7 (no controls)
        surrogate (SurrogateModel): frozen surrogate
        seed (int): seeds the linear layer and the controls

    Returns:
        SingleLayerDnpuClassifier
    """
    return SingleLayerDnpuClassifier(surrogate, receptive_width, logit_scale, seed)


def classify(classifier, images):
    """Class scores (n, 10) and argmax labels (n,) for standardized flattened images."""
    images = check_images(images)
    with torch.no_grad():
        scores = classifier(images)
    return scores, scores.argmax(dim=1)

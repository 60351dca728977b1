import logging

import torch
from torch import nn

from dnpu_forge.models.dense import as_tensor
from dnpu_forge.models.dnpu import XOR_ASSIGNMENT, DnpuNode, dnpu_nodes
from dnpu_forge.utils.errors import ContractError
from dnpu_forge.utils.seeding import stream_seed
from dnpu_forge.utils.validators import validate_width

logger = logging.getLogger(__name__)

DEFAULT_CLIP_WIDTH = 3.0
STD_EPSILON = 1e-8


class InterlayerMap(nn.Module):
    """
    Standardize upstream currents, clip to +-clip_width, and map linearly onto
    the downstream electrodes' voltage ranges (-clip_width -> low, +clip_width -> high).

    Train mode standardizes with population batch statistics and stores them;
    eval mode reuses the stored statistics.
    """

    def __init__(self, target_ranges, clip_width=DEFAULT_CLIP_WIDTH, eps=STD_EPSILON):
        super().__init__()
        if clip_width <= 0:
            raise ContractError(f"clip_width must be > 0, got {clip_width}")
        width = len(target_ranges)
        self.clip_width = float(clip_width)
        self.eps = eps
        self.register_buffer("low", torch.tensor([r[0] for r in target_ranges], dtype=torch.float64))
        self.register_buffer("high", torch.tensor([r[1] for r in target_ranges], dtype=torch.float64))
        self.register_buffer("mean", torch.zeros(width, dtype=torch.float64))
        self.register_buffer("std", torch.ones(width, dtype=torch.float64))

    def forward(self, y):
        y = validate_width(as_tensor(y), len(self.low), "upstream currents")
        if self.training:
            if y.shape[0] < 2:
                raise ContractError("InterlayerMap needs a batch of >= 2 samples in train mode")
            mean = y.mean(dim=0)
            std = torch.sqrt(y.var(dim=0, correction=0) + self.eps)
            with torch.no_grad():
                self.mean.copy_(mean)
                self.std.copy_(std)
        else:
            mean, std = self.mean, self.std
        z = ((y - mean) / std).clamp(-self.clip_width, self.clip_width)
        mapped = self.low + (self.high - self.low) * (z + self.clip_width) / (2 * self.clip_width)
        # rounding can leave the affine map an ulp outside the electrode range
        return torch.maximum(torch.minimum(mapped, self.high), self.low)


def interlayer_forward(interlayer, upstream, mode="eval"):
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    interlayer.train(mode == "train")
    return interlayer(upstream)


class LayeredDnpuNetwork(nn.Module):
    """
    Feed-forward layers of DNPU nodes joined by interlayer maps.

    Every input-layer node receives the same sample; node j of layer k+1 reads
    all outputs of layer k on its data electrodes. The last layer must hold a
    single node.

    Args:
        surrogate (SurrogateModel): shared frozen surrogate
        topology (tuple[int]): nodes per layer, e.g. (2, 2, 1)
        assignment (ElectrodeAssignment): used by every node
        clip_width (float): interlayer clip in standard deviations
        seed (int): control initialization seed
        noise_sigma_train (float): per-node output noise (nA) for training
    """

    def __init__(self, surrogate, topology=(2, 2, 1), assignment=XOR_ASSIGNMENT, clip_width=DEFAULT_CLIP_WIDTH,
                 seed=0, noise_sigma_train=0.0):
        super().__init__()
        topology = tuple(int(w) for w in topology)
        arity = len(assignment.data_inputs)
        if not topology or any(w < 1 for w in topology) or topology[-1] != 1:
            raise ContractError(f"Topology {topology} must be non-empty, positive and end in a single node")
        for k, width in enumerate(topology[:-1]):
            if width != arity:
                raise ContractError(f"Layer {k} has {width} nodes but the next layer's nodes take {arity} inputs")
        self.topology = topology
        self.layers = nn.ModuleList(
            nn.ModuleList(
                DnpuNode(surrogate, assignment, noise_sigma_train=noise_sigma_train, seed=stream_seed(seed, k, j))
                for j in range(width)
            )
            for k, width in enumerate(topology)
        )
        target = [surrogate.input_ranges[e] for e in assignment.data_inputs]
        self.maps = nn.ModuleList(InterlayerMap(target, clip_width) for _ in topology[:-1])

    @property
    def input_size(self):
        return self.layers[0][0].arity

    def dnpu_nodes(self):
        return dnpu_nodes(self)

    def layer_outputs(self, x, noise_sigma=None, generator=None):
        """Currents of every layer, (n, width_k) each."""
        h = validate_width(as_tensor(x), self.input_size, "samples")
        outputs = []
        for k, layer in enumerate(self.layers):
            if k > 0:
                h = self.maps[k - 1](h)
            h = torch.stack([node(h, noise_sigma=noise_sigma, generator=generator) for node in layer], dim=1)
            outputs.append(h)
        return outputs

    def forward(self, x, noise_sigma=None, generator=None):
        return self.layer_outputs(x, noise_sigma, generator)[-1][:, 0]


def network_forward(network, samples, noise_sigma=None, generator=None, mode="eval"):
    """
    Output currents (nA) of a layered network.

    Args:
        network (LayeredDnpuNetwork): network to evaluate
        samples: (n, 2) input voltages
        noise_sigma (float): per-node output noise; None disables it
        generator (torch.Generator): noise stream
        mode (str): 'train' recomputes and stores interlayer statistics

    Returns:
        torch.Tensor: (n,) output currents
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    network.train(mode == "train")
    return network(samples, noise_sigma=noise_sigma, generator=generator)

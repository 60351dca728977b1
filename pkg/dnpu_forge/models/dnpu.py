"""
Trainable DNPU nodes: a frozen surrogate with learnable control voltages on a
subset of its electrodes, and gradient-descent training of those controls.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
from torch import nn

from dnpu_forge.models.dense import as_tensor
from dnpu_forge.models.decision import DecisionNode
from dnpu_forge.models.device import ELECTRODE_COUNT
from dnpu_forge.models.optim import AdamHyper, AdamState, adam_step
from dnpu_forge.utils.config import ControlConfig
from dnpu_forge.utils.errors import ContractError, DivergedTrainingError
from dnpu_forge.utils.seeding import numpy_rng, torch_generator
from dnpu_forge.utils.validators import in_ranges, validate_width

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElectrodeAssignment:
    """Split of the 7 activation electrodes into data inputs and controls."""

    data_inputs: tuple
    controls: tuple

    def __post_init__(self):
        object.__setattr__(self, "data_inputs", tuple(int(e) for e in self.data_inputs))
        object.__setattr__(self, "controls", tuple(int(e) for e in self.controls))
        electrodes = self.data_inputs + self.controls
        if sorted(electrodes) != list(range(ELECTRODE_COUNT)):
            raise ContractError(
                f"Data inputs {self.data_inputs} and controls {self.controls} must partition e0..e{ELECTRODE_COUNT - 1}"
            )

    @classmethod
    def for_inputs(cls, data_inputs):
        return cls(tuple(data_inputs), tuple(e for e in range(ELECTRODE_COUNT) if e not in data_inputs))

    @property
    def gather_index(self):
        """Column of the [data_inputs | controls] block feeding each electrode e0..e6."""
        order = self.data_inputs + self.controls
        return [order.index(e) for e in range(ELECTRODE_COUNT)]


XOR_ASSIGNMENT = ElectrodeAssignment((1, 2), (0, 3, 4, 5, 6))


class DnpuNode(nn.Module):
    """
    One DNPU: data voltages on the assignment's inputs, learnable constant
    voltages on its controls, output current from the shared frozen surrogate.

    Args:
        surrogate (SurrogateModel): frozen, shared between nodes
        assignment (ElectrodeAssignment): electrode roles
        control_voltages: initial controls in V; drawn uniformly inside the
            control ranges from seed when omitted
        noise_sigma_train (float): Gaussian output noise (nA) used by training
        seed (int): control initialization seed
    """

    def __init__(self, surrogate, assignment=XOR_ASSIGNMENT, control_voltages=None, noise_sigma_train=0.0, seed=0):
        super().__init__()
        self.surrogate = surrogate
        self.assignment = assignment
        self.noise_sigma_train = float(noise_sigma_train)
        if control_voltages is None:
            control_voltages = self.initial_controls(seed)
        controls = as_tensor(control_voltages).reshape(-1).clone()
        if controls.numel() != len(assignment.controls):
            raise ContractError(f"Need {len(assignment.controls)} control voltages, got {controls.numel()}")
        self.control_voltages = nn.Parameter(controls)
        self.register_buffer("gather", torch.tensor(assignment.gather_index, dtype=torch.long))

    @property
    def control_ranges(self):
        return [self.surrogate.input_ranges[e] for e in self.assignment.controls]

    @property
    def data_ranges(self):
        return [self.surrogate.input_ranges[e] for e in self.assignment.data_inputs]

    @property
    def arity(self):
        return len(self.assignment.data_inputs)

    def initial_controls(self, seed):
        rng = numpy_rng(seed)
        return np.array([rng.uniform(low, high) for low, high in self.control_ranges], dtype=np.float64)

    def reset_controls(self, seed):
        with torch.no_grad():
            self.control_voltages.copy_(as_tensor(self.initial_controls(seed)))

    def controls_in_range(self):
        return in_ranges(self.control_voltages.detach().tolist(), self.control_ranges)

    def assemble(self, x):
        """Full (n, 7) electrode voltages for a (n, arity) data batch."""
        x = validate_width(as_tensor(x), self.arity, "data inputs")
        controls = self.control_voltages.unsqueeze(0).expand(x.shape[0], -1)
        return torch.cat([x, controls], dim=1)[:, self.gather]

    def forward(self, x, noise_sigma=None, generator=None):
        currents = self.surrogate(self.assemble(x))
        if noise_sigma:
            currents = currents + noise_sigma * torch.randn(currents.shape, generator=generator, dtype=torch.float64)
        return currents


class ScalarClassifier(nn.Module):
    """
    Scalar-output body followed by a DecisionNode.

    Training noise is added to the body's scalar output before the decision
    node, for DNPU nodes and conventional bodies alike.
    """

    def __init__(self, body, head=None):
        super().__init__()
        self.body = body
        self.head = head if head is not None else DecisionNode()

    def scores(self, x, noise_sigma=None, generator=None):
        y = self.body(as_tensor(x)).reshape(-1)
        if noise_sigma:
            y = y + noise_sigma * torch.randn(y.shape, generator=generator, dtype=torch.float64)
        return y

    def forward(self, x, noise_sigma=None, generator=None):
        return self.head.logits(self.scores(x, noise_sigma, generator))

    def dnpu_nodes(self):
        return dnpu_nodes(self)

    def predict(self, x):
        with torch.no_grad():
            return self.head.predict(self.scores(x))


def dnpu_nodes(module):
    return [m for m in module.modules() if isinstance(m, DnpuNode)]


def node_forward(node, inputs, noise_sigma=None, generator=None, noise="off"):
    """
    Output currents (nA) of a node for a batch of data-input voltages.

    Args:
        node (DnpuNode): node to evaluate
        inputs: (n, arity) voltages, or a single arity-vector
        noise_sigma (float): Gaussian output noise; None or 0 disables it
        generator (torch.Generator): noise stream
        noise (str): 'train' applies the node's noise_sigma_train instead of noise_sigma

    Returns:
        torch.Tensor: (n,) currents
    """
    if noise not in ("off", "train"):
        raise ContractError(f"noise must be 'off' or 'train', got {noise!r}")
    if noise == "train":
        noise_sigma = node.noise_sigma_train
    x = as_tensor(inputs)
    if x.ndim == 1:
        x = x.unsqueeze(0)
    return node(x, noise_sigma=noise_sigma, generator=generator)


def range_penalty(controls, ranges, alpha=1.0):
    """alpha * sum of the distances by which controls leave their closed ranges."""
    controls = as_tensor(controls).reshape(-1)
    if controls.numel() != len(ranges):
        raise ContractError(f"Need one range per control, got {len(ranges)} for {controls.numel()}")
    if not ranges:
        return controls.sum() * 0.0
    low = torch.tensor([r[0] for r in ranges], dtype=torch.float64)
    high = torch.tensor([r[1] for r in ranges], dtype=torch.float64)
    return alpha * (torch.relu(controls - high) + torch.relu(low - controls)).sum()


def system_penalty(system, alpha):
    nodes = dnpu_nodes(system)
    if not nodes:
        return torch.zeros((), dtype=torch.float64)
    return sum(range_penalty(node.control_voltages, node.control_ranges, alpha) for node in nodes)


@dataclass
class ControlTrainingResult:
    history: pd.DataFrame
    controls: list
    controls_in_range: bool
    final_loss: float
    kept_epoch: int = 0


def _trainable_state(system):
    """Copies of the trainable parameters and buffers, restorable with load_state_dict(strict=False)."""
    state = {name: p.detach().clone() for name, p in system.named_parameters() if p.requires_grad}
    state.update({name: b.detach().clone() for name, b in system.named_buffers()})
    return state


def train_controls(system, inputs, targets, loss_fn, config=ControlConfig()):
    """
    Gradient descent on every trainable parameter of a system through its frozen surrogate.

    The loss is loss_fn(system output, targets) plus the range penalty of every
    DNPU node. Noise of config.noise_sigma is injected by the system's forward.
    If training ends with a control out of range, the system is rolled back
    to the last epoch that ended with every control in range.

    Args:
        system (nn.Module): forward(x, noise_sigma, generator); its DnpuNodes
            hold the controls
        inputs: (n, d) training inputs
        targets: labels or regression targets, consumed by loss_fn
        loss_fn (callable): task loss, e.g. loss_bce_logits or loss_neg_fisher
        config (ControlConfig): epochs, batch size, Adam settings, alpha, noise, seed

    Returns:
        ControlTrainingResult: per-epoch history, final controls, range check
            and kept_epoch, the epoch whose parameters the system holds
    """
    x = as_tensor(inputs)
    y = torch.as_tensor(np.asarray(targets)) if not isinstance(targets, torch.Tensor) else targets
    nodes = dnpu_nodes(system)
    params = [p for p in system.parameters() if p.requires_grad and p.numel() > 0]

    def all_in_range():
        return all(node.controls_in_range() for node in nodes)

    history = []
    feasible_epoch, feasible_state = None, None
    if all_in_range():
        feasible_epoch, feasible_state = 0, _trainable_state(system)
    if config.epochs > 0 and params:
        state = AdamState(params, AdamHyper(config.learning_rate, config.beta1, config.beta2))
        generator = torch_generator(config.seed, 1)
        rng = numpy_rng(config.seed, 2)
        batch_size = config.batch_size or len(x)
        system.train()
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(x)) if batch_size < len(x) else np.arange(len(x))
            epoch_task, epoch_penalty = 0.0, 0.0
            for start in range(0, len(x), batch_size):
                index = torch.from_numpy(order[start:start + batch_size])
                task = loss_fn(system(x[index], noise_sigma=config.noise_sigma, generator=generator), y[index])
                penalty = system_penalty(system, config.alpha)
                loss = task + penalty
                if not torch.isfinite(loss):
                    raise DivergedTrainingError(epoch, loss.item())
                grads = torch.autograd.grad(loss, params, allow_unused=True)
                grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
                adam_step(state, params, grads)
                epoch_task += task.item() * len(index) / len(x)
                epoch_penalty += penalty.item() * len(index) / len(x)
            history.append({"epoch": epoch, "loss": epoch_task + epoch_penalty, "task_loss": epoch_task,
                            "penalty": epoch_penalty})
            if all_in_range():
                feasible_epoch, feasible_state = epoch, _trainable_state(system)
            if config.log_every and epoch % config.log_every == 0:
                logger.debug(f"Control epoch {epoch}: loss {epoch_task + epoch_penalty:.6g}")

    kept_epoch = len(history)
    if not all_in_range():
        if feasible_state is None:
            logger.warning("Controls outside their electrode ranges after training")
        else:
            system.load_state_dict(feasible_state, strict=False)
            logger.warning(f"Controls left their electrode ranges; rolled back from epoch {kept_epoch} "
                           f"to epoch {feasible_epoch}, the last one in range")
            kept_epoch = feasible_epoch
    history = pd.DataFrame(history, columns=["epoch", "loss", "task_loss", "penalty"])
    return ControlTrainingResult(
        history=history,
        controls=[node.control_voltages.detach().numpy().copy() for node in nodes],
        controls_in_range=all_in_range(),
        final_loss=float(history["loss"].iloc[-1]) if len(history) else float("nan"),
        kept_epoch=kept_epoch,
    )


def node_document(node, task, config=None, metrics=None):
    """Trained-node document: assignment, controls (V), task id, training config, final metrics."""
    return {
        "task": task,
        "data_inputs": list(node.assignment.data_inputs),
        "controls": list(node.assignment.controls),
        "control_voltages": [float(v) for v in node.control_voltages.detach().tolist()],
        "config": dict(config or {}),
        "metrics": dict(metrics or {}),
    }

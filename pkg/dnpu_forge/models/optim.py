import logging
from dataclasses import dataclass

import torch

from dnpu_forge.utils.errors import ContractError, NumericError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamHyper:
    """Adam hyperparameters; weight_decay > 0 switches on decoupled decay."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0


class AdamState:
    """
    Optimizer state for one set of trainable tensors.

    Wraps torch.optim.AdamW, which is plain bias-corrected Adam when
    weight_decay is 0. Single owner; never share across jobs.
    """

    def __init__(self, params, hyper=AdamHyper()):
        self.params = list(params)
        if not self.params:
            raise ContractError("AdamState needs at least one trainable tensor")
        self.hyper = hyper
        self.optimizer = torch.optim.AdamW(
            self.params,
            lr=hyper.learning_rate,
            betas=(hyper.beta1, hyper.beta2),
            eps=hyper.epsilon,
            weight_decay=hyper.weight_decay,
        )

    def _state(self, param):
        return self.optimizer.state.get(param, {})

    @property
    def step_count(self):
        state = self._state(self.params[0])
        return int(state["step"]) if "step" in state else 0

    @property
    def first_moment(self):
        return [self._state(p).get("exp_avg", torch.zeros_like(p)) for p in self.params]

    @property
    def second_moment(self):
        return [self._state(p).get("exp_avg_sq", torch.zeros_like(p)) for p in self.params]


def adam_step(state, params, grads):
    """
    Apply one Adam update in place.

    Args:
        state (AdamState): optimizer state owning params
        params: the tensors registered in state, in the same order
        grads: one gradient per tensor

    Returns:
        tuple: (params, state)
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(state.params) or any(p is not q for p, q in zip(params, state.params)):
        raise ContractError("adam_step params must be the tensors registered in the AdamState")
    if len(grads) != len(params):
        raise ContractError(f"Got {len(grads)} gradients for {len(params)} parameters")
    for index, (param, grad) in enumerate(zip(params, grads)):
        if grad.shape != param.shape:
            raise ContractError(f"Gradient {index} has shape {tuple(grad.shape)}, parameter {tuple(param.shape)}")
        if not bool(torch.isfinite(grad).all()):
            raise NumericError(f"Non-finite gradient for parameter {index}", parameter_index=index)
    for param, grad in zip(params, grads):
        param.grad = grad.detach().clone()
    state.optimizer.step()
    for param in params:
        param.grad = None
    return params, state

import torch
from torch import nn

from dnpu_forge.models.dense import as_tensor
from dnpu_forge.utils.errors import ContractError

# float64 logistic rounds to exactly 0 or 1 far out in the tails
PROB_FLOOR = 2.0 ** -1074
PROB_CEIL = 1.0 - 2.0 ** -53


class DecisionNode(nn.Module):
    """
    Scalar batch normalization with a learnable affine map, followed by a logistic.

    Training mode normalizes with population batch statistics and updates the
    running statistics; evaluation mode uses the running statistics.
    """

    def __init__(self, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones((), dtype=torch.float64))
        self.beta = nn.Parameter(torch.zeros((), dtype=torch.float64))
        self.register_buffer("running_mean", torch.zeros((), dtype=torch.float64))
        self.register_buffer("running_var", torch.ones((), dtype=torch.float64))

    def logits(self, x):
        x = as_tensor(x).reshape(-1)
        if self.training:
            if x.numel() < 2:
                raise ContractError("DecisionNode needs a batch of >= 2 values in train mode")
            mean, var = x.mean(), x.var(correction=0)
            with torch.no_grad():
                self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mean)
                self.running_var.mul_(1 - self.momentum).add_(self.momentum * var)
        else:
            mean, var = self.running_mean, self.running_var
        return self.gamma * (x - mean) / torch.sqrt(var + self.eps) + self.beta

    def forward(self, x):
        return torch.sigmoid(self.logits(x)).clamp(PROB_FLOOR, PROB_CEIL)

    def predict(self, x):
        """Class labels at probability threshold 0.5 in evaluation mode."""
        was_training = self.training
        self.eval()
        with torch.no_grad():
            labels = (self.logits(x) > 0).to(torch.long)
        self.train(was_training)
        return labels


def decision_forward(node, batch, mode="train"):
    """Probabilities for a scalar batch in 'train' or 'eval' mode."""
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    node.train(mode == "train")
    return node(batch)

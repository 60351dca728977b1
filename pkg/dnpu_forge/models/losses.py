"""Loss functions. All return 0-d float64 tensors and are differentiable in their first argument."""

import torch
import torch.nn.functional as F

from dnpu_forge.models.dense import as_tensor
from dnpu_forge.utils.errors import DegenerateBatchError, DomainError

FISHER_EPSILON = 1e-8


def loss_mse(pred, target):
    return F.mse_loss(as_tensor(pred), as_tensor(target).reshape(as_tensor(pred).shape))


def loss_bce(prob, label):
    """Binary cross-entropy on probabilities; every prob must lie strictly inside (0, 1)."""
    prob = as_tensor(prob)
    if not bool(((prob > 0) & (prob < 1)).all()):
        raise DomainError("loss_bce needs probabilities strictly inside (0, 1)")
    return F.binary_cross_entropy(prob, as_tensor(label).reshape(prob.shape))


def loss_bce_logits(logits, label):
    """Binary cross-entropy evaluated from logits (used during training, no saturation)."""
    logits = as_tensor(logits)
    return F.binary_cross_entropy_with_logits(logits, as_tensor(label).reshape(logits.shape))


def loss_cross_entropy(logits, class_index):
    """Mean softmax cross-entropy; logits (batch, classes) or a single (classes,) row."""
    logits = as_tensor(logits)
    if not bool(torch.isfinite(logits).all()):
        raise DomainError("loss_cross_entropy needs finite logits")
    target = torch.as_tensor(class_index, dtype=torch.long)
    if logits.ndim == 1:
        logits, target = logits.unsqueeze(0), target.reshape(1)
    return F.cross_entropy(logits, target)


def class_statistics(outputs, labels):
    """Class-wise population mean and variance: (mu0, var0, mu1, var1)."""
    outputs = as_tensor(outputs).reshape(-1)
    labels = torch.as_tensor(labels).reshape(-1).to(torch.bool)
    class0, class1 = outputs[~labels], outputs[labels]
    if class0.numel() == 0 or class1.numel() == 0:
        raise DegenerateBatchError("Fisher criterion needs both classes in the batch")
    return class0.mean(), class0.var(correction=0), class1.mean(), class1.var(correction=0)


def loss_neg_fisher(outputs, labels, epsilon=FISHER_EPSILON):
    """-(mu1 - mu0)^2 / (var0 + var1 + epsilon)."""
    mu0, var0, mu1, var1 = class_statistics(outputs, labels)
    return -((mu1 - mu0) ** 2) / (var0 + var1 + epsilon)

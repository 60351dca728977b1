import copy
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch

from dnpu_forge.models.dense import as_tensor, count_parameters
from dnpu_forge.models.dnpu import system_penalty
from dnpu_forge.models.losses import loss_cross_entropy
from dnpu_forge.models.mnist import N_CLASSES, LocalReceptiveNet, check_images
from dnpu_forge.models.optim import AdamHyper, AdamState, adam_step
from dnpu_forge.utils.config import MnistConfig
from dnpu_forge.utils.errors import DivergedTrainingError
from dnpu_forge.utils.seeding import numpy_rng

logger = logging.getLogger(__name__)

EVAL_BATCH = 1000
RANGE_PENALTY_ALPHA = 1.0


@dataclass
class MnistReport:
    model: str
    receptive_width: int
    train_accuracy: float
    validation_accuracy: float
    test_accuracy: float
    confusion: np.ndarray
    history: pd.DataFrame
    best_epoch: int
    trainable_parameters: int
    output_operations_per_node: int = None

    def summary(self):
        return {
            "model": self.model, "receptive_width": self.receptive_width,
            "train_accuracy": self.train_accuracy, "validation_accuracy": self.validation_accuracy,
            "test_accuracy": self.test_accuracy, "best_epoch": self.best_epoch,
            "trainable_parameters": self.trainable_parameters,
            "output_operations_per_node": self.output_operations_per_node,
        }


def predict(model, images):
    model.eval()
    labels = []
    with torch.no_grad():
        for start in range(0, len(images), EVAL_BATCH):
            labels.append(model(as_tensor(images[start:start + EVAL_BATCH])).argmax(dim=1).numpy())
    return np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)


def _accuracy(model, images, labels):
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(predict(model, images) == labels))


def confusion_counts(true_labels, predicted):
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (np.asarray(true_labels), np.asarray(predicted)), 1)
    return counts


def train_mnist(model, data, config=MnistConfig(), learning_rate=None, seed=0, name="dnpu"):
    """
    Mini-batch Adam on softmax cross-entropy, keeping the best validation epoch.

    The loss adds 0.5 * weight_decay * ||W||^2 on the first linear layer's
    weights and the range penalty of every DNPU node; controls never carry the
    weight-decay term.

    Args:
        model: SingleLayerDnpuClassifier or LocalReceptiveNet
        data (MnistData): standardized splits
        config (MnistConfig): epochs, batch size, weight decay, logging stride
        learning_rate (float): overrides config.learning_rate
        seed (int): shuffle seed
        name (str): model tag for the report

    Returns:
        MnistReport
    """
    check_images(data.train_images[:1])
    learning_rate = config.learning_rate if learning_rate is None else learning_rate
    params = [p for p in model.parameters() if p.requires_grad and p.numel() > 0]
    state = AdamState(params, AdamHyper(learning_rate=learning_rate))
    x_train, y_train = as_tensor(data.train_images), torch.as_tensor(data.train_labels)

    best_accuracy = _accuracy(model, data.validation_images, data.validation_labels)
    best_epoch, best_state = 0, copy.deepcopy(model.state_dict())
    history = [{"epoch": 0, "train_loss": float("nan"), "val_accuracy": best_accuracy}]
    logger.info(f"Training {name} R={model.receptive_width} on {len(y_train)} images for {config.epochs} epochs "
                f"(lr {learning_rate})")

    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.from_numpy(numpy_rng(seed, epoch).permutation(len(y_train)))
        total = 0.0
        for start in range(0, len(y_train), config.batch_size):
            index = order[start:start + config.batch_size]
            loss = loss_cross_entropy(model(x_train[index]), y_train[index])
            loss = loss + model.weight_penalty(config.weight_decay) + system_penalty(model, RANGE_PENALTY_ALPHA)
            if not torch.isfinite(loss):
                raise DivergedTrainingError(epoch, loss.item())
            grads = torch.autograd.grad(loss, params, allow_unused=True)
            grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
            adam_step(state, params, grads)
            total += loss.item() * len(index)
        val_accuracy = _accuracy(model, data.validation_images, data.validation_labels)
        history.append({"epoch": epoch, "train_loss": total / len(y_train), "val_accuracy": val_accuracy})
        if val_accuracy > best_accuracy:
            best_accuracy, best_epoch, best_state = val_accuracy, epoch, copy.deepcopy(model.state_dict())
        if config.log_every and epoch % config.log_every == 0:
            logger.info(f"{name} epoch {epoch}: train loss {total / len(y_train):.4f}, "
                        f"validation accuracy {val_accuracy:.4f}")

    model.load_state_dict(best_state)
    predicted = predict(model, data.test_images)
    report = MnistReport(
        model=name,
        receptive_width=model.receptive_width,
        train_accuracy=_accuracy(model, data.train_images, data.train_labels),
        validation_accuracy=best_accuracy,
        test_accuracy=float(np.mean(predicted == data.test_labels)) if len(predicted) else float("nan"),
        confusion=confusion_counts(data.test_labels, predicted),
        history=pd.DataFrame(history),
        best_epoch=best_epoch,
        trainable_parameters=count_parameters(model, trainable_only=True),
    )
    logger.info(f"{name} R={model.receptive_width}: best epoch {best_epoch}, test accuracy {report.test_accuracy:.4f}")
    return report


def baseline_local_nn(receptive_width, data, config=MnistConfig(), seed=0):
    """Train the conventional local-receptive-field network with the baseline learning rate."""
    model = LocalReceptiveNet(receptive_width, seed)
    report = train_mnist(model, data, config, learning_rate=config.baseline_learning_rate, seed=seed,
                         name="baseline")
    report.output_operations_per_node = model.output_operations_per_node()
    return report


@dataclass
class Confusion:
    counts: pd.DataFrame
    percentages: pd.DataFrame
    top: pd.DataFrame


def confusion(report, top=5):
    """
    Confusion matrix (rows = true class) with row-normalized percentages and
    the largest off-diagonal entries.
    """
    counts = np.asarray(report.confusion)
    rows = counts.sum(axis=1, keepdims=True)
    percentages = np.divide(100.0 * counts, rows, out=np.zeros(counts.shape), where=rows > 0)
    off = [(t, p, counts[t, p], percentages[t, p]) for t in range(N_CLASSES) for p in range(N_CLASSES) if t != p]
    off.sort(key=lambda e: (-e[3], e[0], e[1]))
    labels = [str(k) for k in range(N_CLASSES)]
    return Confusion(
        counts=pd.DataFrame(counts, index=labels, columns=labels),
        percentages=pd.DataFrame(percentages, index=labels, columns=labels),
        top=pd.DataFrame([e for e in off[:top] if e[2] > 0], columns=["true", "predicted", "count", "percent"]),
    )

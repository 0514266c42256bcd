"""
Minibatch SGD with hand-written backward passes
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bnrectify.core import const, tensor
from bnrectify.core.corruptions import CorruptionSpec, SeverityTable, corrupt_images
from bnrectify.core.dataset import RawDataset
from bnrectify.core.errors import FormatError, SemanticError
from bnrectify.core.model import LayerKind, ModelGraph, Mode, forward, predict
from bnrectify.core.normalization import batch_norm_backward, group_norm_backward
from bnrectify.core.rng import RngStream, derive_seed


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimizer and schedule settings.

    :ivar augment: When set, every training image is replaced by its
        corrupted version at this kind and severity, with fresh noise
        each epoch.
    """

    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    augment: CorruptionSpec | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise SemanticError(f"batch size must be at least 2, got {self.batch_size}")
        if self.learning_rate < 0:
            raise SemanticError(f"learning rate must be non-negative, got {self.learning_rate}")
        if self.epochs < 0:
            raise SemanticError(f"epochs must be non-negative, got {self.epochs}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    eval_acc: float | None = None


def backward(
    model: ModelGraph, inputs: dict[str, np.ndarray], grad_logits: np.ndarray
) -> dict[str, np.ndarray]:
    """
    Gradients of the loss with respect to every learnable parameter

    :param model: The graph the forward pass ran on.
    :type model: :class:`ModelGraph`
    :param inputs: Per-layer inputs recorded by a train-mode
        :func:`~bnrectify.core.model.forward` with ``record_inputs``.
    :param grad_logits: Gradient of the loss with respect to the logits.

    :return: Gradients keyed like ``model.params``; population
        statistics receive none.
    :rtype: dict
    """
    p = model.params
    grads = {}
    grad = grad_logits
    for layer in reversed(model.layers):
        x = inputs[layer.name]
        h = layer.hyper
        if layer.kind is LayerKind.DENSE:
            grad, grads[layer.key("weight")], grads[layer.key("bias")] = tensor.dense_backward(
                x, p[layer.key("weight")], grad
            )
        elif layer.kind is LayerKind.GAP:
            grad = tensor.global_avg_pool_backward(x.shape, grad)
        elif layer.kind is LayerKind.AVGPOOL:
            grad = tensor.avgpool2d_backward(x.shape, int(h["k"]), grad)
        elif layer.kind is LayerKind.RELU:
            grad = tensor.relu_backward(x, grad)
        elif layer.kind is LayerKind.BN:
            grad, grads[layer.key("gamma")], grads[layer.key("beta")] = batch_norm_backward(
                x, p[layer.key("gamma")], float(h["epsilon"]), grad
            )
        elif layer.kind in (LayerKind.GN, LayerKind.IN):
            groups = int(h["groups"]) if layer.kind is LayerKind.GN else int(h["channels"])
            grad, grads[layer.key("gamma")], grads[layer.key("beta")] = group_norm_backward(
                x, groups, p[layer.key("gamma")], float(h["epsilon"]), grad
            )
        elif layer.kind is LayerKind.CONV:
            grad, grads[layer.key("weight")], grads[layer.key("bias")] = tensor.conv2d_backward(
                x, p[layer.key("weight")], int(h["stride"]), int(h["padding"]), grad
            )
    return grads


def _decayed(key: str, model: ModelGraph) -> bool:
    layer = model.layer(key.rsplit(".", 1)[0])
    return key.endswith(".weight") and layer.kind in (LayerKind.CONV, LayerKind.DENSE)


class SGD:
    """
    Heavy-ball SGD; weight decay applies to conv and dense weights only.
    """

    def __init__(self, learning_rate: float, momentum: float, weight_decay: float) -> None:
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, model: ModelGraph, grads: dict[str, np.ndarray]) -> ModelGraph:
        updates = {}
        for key, grad in grads.items():
            weight = model.params[key]
            if self.weight_decay and _decayed(key, model):
                grad = grad + self.weight_decay * weight
            velocity = self.velocity.get(key)
            velocity = grad if velocity is None else self.momentum * velocity + grad
            self.velocity[key] = velocity
            updates[key] = (weight - self.learning_rate * velocity).astype(weight.dtype)
        return model.with_params(updates)


def accuracy(model: ModelGraph, dataset: RawDataset) -> float:
    """Eval-mode top-1 accuracy on ``dataset``."""
    if not len(dataset):
        return float("nan")
    predictions = predict(model, dataset.pixels())
    return float(np.mean(predictions == dataset.labels))


def train(
    model: ModelGraph,
    dataset: RawDataset,
    config: TrainConfig,
    eval_dataset: RawDataset | None = None,
    table: SeverityTable | None = None,
) -> tuple[ModelGraph, list[EpochRecord]]:
    """
    Train ``model`` on ``dataset``

    Batches are drawn from a fresh permutation every epoch; the last
    incomplete batch is dropped so BN always sees ``batch_size`` samples.

    :param eval_dataset: Optional held-out set for the ``eval_acc``
        column of the trace.
    :param table: Severity table used by augmentation.

    :return: ``(trained_model, trace)``; BN population statistics are
        the moving averages accumulated while training.
    :rtype: tuple
    """
    dataset.check_labels(model.num_classes)
    if dataset.image_shape != tuple(model.input_shape):
        raise SemanticError(
            f"dataset images {dataset.image_shape} do not fit model input {model.input_shape}"
        )
    optimizer = SGD(config.learning_rate, config.momentum, config.weight_decay)
    pixels = dataset.pixels()
    labels = dataset.labels.astype(np.int64)
    steps = len(dataset) // config.batch_size
    trace = []
    for epoch in range(1, config.epochs + 1):
        order = RngStream(config.seed, epoch).child("shuffle").generator().permutation(
            len(dataset)
        )
        epoch_pixels = pixels
        if config.augment is not None:
            spec = CorruptionSpec(
                config.augment.kind,
                config.augment.severity,
                derive_seed(config.seed, "augment", epoch),
            )
            epoch_pixels = corrupt_images(pixels, spec, table)
        total_loss = 0.0
        correct = 0
        for step in range(steps):
            batch = order[step * config.batch_size : (step + 1) * config.batch_size]
            x, y = epoch_pixels[batch], labels[batch]
            result = forward(model, x, Mode.TRAIN, record_inputs=True)
            loss, probs = tensor.softmax_xent(result.logits, y)
            if not math.isfinite(loss):
                raise SemanticError(f"loss became {loss} at epoch {epoch}, step {step + 1}")
            grads = backward(result.model, result.inputs, tensor.softmax_xent_backward(probs, y))
            model = optimizer.step(result.model, grads)
            total_loss += loss
            correct += int(np.sum(probs.argmax(axis=1) == y))
        record = EpochRecord(
            epoch,
            total_loss / max(steps, 1),
            correct / max(steps * config.batch_size, 1),
            accuracy(model, eval_dataset) if eval_dataset is not None else None,
        )
        logger.info(
            "epoch %d: loss %.4f train_acc %.4f eval_acc %s",
            epoch, record.loss, record.train_acc, record.eval_acc,
        )
        trace.append(record)
    return model, trace


def write_trace(path: str | Path, trace: list[EpochRecord]) -> None:
    """Write the per-epoch trace as CSV."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(const.TRACE_COLUMNS)
            for record in trace:
                eval_acc = "" if record.eval_acc is None else f"{record.eval_acc:.6f}"
                writer.writerow(
                    [record.epoch, f"{record.loss:.6f}", f"{record.train_acc:.6f}", eval_acc]
                )
    except OSError as exc:
        raise FormatError(f"cannot write trace {path}: {exc.strerror}") from exc


@dataclass
class GradCheckReport:
    """
    :ivar max_relative_error: Largest error over every checked coordinate.
    :ivar checked: Number of coordinates compared.
    :ivar skipped: Coordinates left out because a ``±step`` shift moved
        some ReLU input across zero.
    :ivar failures: ``(key, flat_index, analytic, numeric, error)`` for
        every coordinate above the tolerance.
    """

    tolerance: float
    max_relative_error: float = 0.0
    checked: int = 0
    skipped: int = 0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.checked > 0


def _relu_pattern(model: ModelGraph, inputs: dict) -> list[np.ndarray]:
    return [inputs[layer.name] > 0 for layer in model.layers if layer.kind is LayerKind.RELU]


def grad_check(
    model: ModelGraph,
    images: np.ndarray,
    labels: np.ndarray,
    tolerance: float = 1e-3,
    step: float = 1e-3,
    max_checks_per_tensor: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare analytic gradients with central finite differences

    Runs on a float64 copy of the model. The error of a coordinate is
    ``|analytic - numeric|`` divided by the largest of ``|analytic|``,
    ``|numeric|``, the largest analytic magnitude in the same tensor and
    ``1e-8``.

    A central difference straddling a ReLU kink measures the average of
    two slopes rather than the gradient. Coordinates whose ``+step`` or
    ``-step`` shift changes the sign pattern of any ReLU input are
    therefore skipped and counted in :attr:`GradCheckReport.skipped`.

    :param max_checks_per_tensor: Check a seeded random subset of this
        many coordinates per tensor; all coordinates by default.
    :type max_checks_per_tensor: int

    :rtype: :class:`GradCheckReport`
    """
    model64 = model.astype(np.float64)
    x = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)

    result = forward(model64, x, Mode.TRAIN, record_inputs=True)
    _, probs = tensor.softmax_xent(result.logits, labels)
    analytic = backward(model64, result.inputs, tensor.softmax_xent_backward(probs, labels))
    pattern = _relu_pattern(model64, result.inputs)

    def shifted_loss(candidate: ModelGraph) -> tuple[float, bool]:
        shifted = forward(candidate, x, Mode.TRAIN, record_inputs=True)
        same = all(
            np.array_equal(a, b) for a, b in zip(pattern, _relu_pattern(candidate, shifted.inputs))
        )
        return tensor.softmax_xent(shifted.logits, labels)[0], same

    report = GradCheckReport(tolerance)
    rng = RngStream(seed).generator()
    for key in model64.parameter_keys(include_statistics=False):
        base = model64.params[key]
        grad = analytic[key]
        indices = np.arange(base.size)
        if max_checks_per_tensor is not None and base.size > max_checks_per_tensor:
            indices = np.sort(rng.choice(base.size, max_checks_per_tensor, replace=False))
        scale = max(float(np.abs(grad).max()), 1e-8)
        for index in indices:
            losses = []
            smooth = True
            for sign in (1.0, -1.0):
                moved = base.copy()
                moved.flat[index] += sign * step
                loss, same = shifted_loss(model64.with_params({key: moved}))
                losses.append(loss)
                smooth = smooth and same
            if not smooth:
                report.skipped += 1
                continue
            numeric = (losses[0] - losses[1]) / (2 * step)
            value = float(grad.flat[index])
            error = abs(value - numeric) / max(abs(value), abs(numeric), scale)
            report.checked += 1
            report.max_relative_error = max(report.max_relative_error, error)
            if error > tolerance:
                report.failures.append((key, int(index), value, numeric, error))
    logger.info(
        "grad check: %d coordinates, %d skipped at ReLU kinks, max relative error %.3g",
        report.checked, report.skipped, report.max_relative_error,
    )
    return report

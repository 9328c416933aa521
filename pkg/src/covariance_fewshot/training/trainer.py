"""
End-to-end few-shot training and evaluation.

The loop freezes class centers and intra-class Gaussians from the first-epoch features, then runs
SGD with warmup and cosine decay over the prototype bank (and the linear adapter when enabled).
After the final epoch the test-time Gaussians are estimated from the adapted training features,
pooled into one shared covariance when the task has few shots.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from covariance_fewshot.core import (
    ClassGaussian,
    DistanceMode,
    IntraMetric,
    LossBreakdown,
    LossGradient,
    PrototypeBank,
    ShrinkageParams,
    adapter_gradient,
    build_class_gaussians,
    build_unified_gaussians,
    classify_batch,
    identity_gaussians,
    loss_cls,
    loss_intra,
    loss_intra_manhattan,
    loss_text_sep,
    total_loss,
)
from covariance_fewshot.data import EmbeddingSet, FewShotTask
from covariance_fewshot.errors import (
    DimensionMismatchError,
    EmptyClassError,
    NonFiniteLossError,
    TooFewPrototypesError,
)
from covariance_fewshot.training.config import TrainConfig
from covariance_fewshot.training.schedule import cosine_lr

log = logging.getLogger(__name__)

GaussianBuilder = Callable[[ArrayLike, ArrayLike, int, ShrinkageParams], list[ClassGaussian]]


@dataclass(frozen=True, eq=False)
class VisualAdapter:
    """
    Linear map ``f' = W f`` applied to features before classification.

    Attributes:
        weight (NDArray): (D, D) weight, identity at initialization.
        enabled (bool): When False the adapter is the identity and is never trained.
    """

    weight: NDArray[np.float64]
    enabled: bool = True

    @classmethod
    def identity(cls, dimension: int, enabled: bool = True) -> "VisualAdapter":
        return cls(weight=np.eye(dimension), enabled=enabled)

    def apply(self, features: ArrayLike) -> NDArray[np.float64]:
        matrix = np.asarray(features, dtype=np.float64)
        if not self.enabled:
            return matrix
        if matrix.shape[-1] != self.weight.shape[1]:
            raise DimensionMismatchError(f"Feature dimension {matrix.shape[-1]} does not match {self.weight.shape[1]}")
        return matrix @ self.weight.T


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """
    Result of a training run.

    Attributes:
        bank (PrototypeBank): Trained prototypes.
        adapter (VisualAdapter): Trained adapter.
        test_gaussians (list[ClassGaussian]): Gaussians from the final adapted training features.
        frozen_intra_gaussians (list[ClassGaussian]): Gaussians the intra-class loss used throughout.
        centers (NDArray): (C, D) first-epoch class centers.
        loss_trace (tuple[LossBreakdown, ...]): Per-epoch mean losses.
        config (TrainConfig): Configuration the model was trained with.
        unified_covariance (bool): Whether the Gaussians share one pooled covariance.
    """

    bank: PrototypeBank
    adapter: VisualAdapter
    test_gaussians: list[ClassGaussian]
    frozen_intra_gaussians: list[ClassGaussian]
    centers: NDArray[np.float64]
    loss_trace: tuple[LossBreakdown, ...]
    config: TrainConfig
    unified_covariance: bool


@dataclass(frozen=True)
class EvaluationResult:
    """
    Accuracy of a model on a labeled set.

    Attributes:
        accuracy (float): Top-1 accuracy in [0, 1].
        per_class_accuracy (dict[int, float]): Accuracy of every class present in the set.
        predictions (tuple[int, ...]): Predicted class of each row.
    """

    accuracy: float
    per_class_accuracy: dict[int, float]
    predictions: tuple[int, ...]


def _class_means(features: NDArray[np.float64], labels: NDArray[np.int64], class_count: int) -> NDArray[np.float64]:
    counts = np.bincount(labels, minlength=class_count)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise EmptyClassError(f"Classes without training samples: {missing.tolist()}")
    sums = np.zeros((class_count, features.shape[1]))
    np.add.at(sums, labels, features)
    return sums / counts[:, None]


def _normalize_rows(prototypes: NDArray[np.float64]) -> NDArray[np.float64]:
    norms = np.linalg.norm(prototypes, axis=-1, keepdims=True)
    return prototypes / np.where(norms > 0, norms, 1.0)


def _seeded_generators(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(init_seq)), np.random.Generator(np.random.PCG64(shuffle_seq))


def _init_bank(task: FewShotTask, config: TrainConfig, rng: np.random.Generator) -> PrototypeBank:
    features = task.train.features
    means = _class_means(features, task.train.labels, task.class_count)
    noise = rng.standard_normal((task.class_count, config.heads, task.dimension))
    prototypes = means[:, None, :] + config.init_scale * noise

    normalized = task.train.normalized
    if normalized:
        prototypes = _normalize_rows(prototypes)
    return PrototypeBank(prototypes=prototypes, normalized=normalized)


def init_model(task: FewShotTask, config: TrainConfig) -> tuple[PrototypeBank, VisualAdapter]:
    """
    Initialize prototypes at the class means plus Gaussian noise, and an identity adapter.

    Prototypes are L2-normalized when the training features are normalized.

    :param task: Few-shot task with at least one sample per class.
    :param config: Training configuration; ``seed`` and ``init_scale`` drive the noise.
    :return: ``(bank, adapter)``.
    :raises EmptyClassError: If a class has no training samples.
    """
    init_rng, _ = _seeded_generators(config.seed)
    bank = _init_bank(task, config, init_rng)
    return bank, VisualAdapter.identity(task.dimension, enabled=config.adapter_enabled)


def _gaussian_builder(config: TrainConfig) -> GaussianBuilder:
    return build_unified_gaussians if config.shots <= config.unified_cov_threshold else build_class_gaussians


def _intra_term(
    features: NDArray[np.float64],
    labels: NDArray[np.int64],
    centers: NDArray[np.float64],
    frozen: Sequence[ClassGaussian],
    metric: IntraMetric,
) -> LossGradient:
    if metric is IntraMetric.MANHATTAN:
        return loss_intra_manhattan(features, labels, centers)
    return loss_intra(features, labels, centers, frozen)


def _separation_term(bank: PrototypeBank, beta: float) -> LossGradient:
    if bank.class_count * bank.heads >= 2:
        return loss_text_sep(bank)
    if beta > 0:
        raise TooFewPrototypesError("Separation loss needs at least 2 prototypes")
    return LossGradient(value=0.0, prototypes=np.zeros_like(bank.prototypes))


def _mean_breakdown(sums: NDArray[np.float64], steps: int, config: TrainConfig) -> LossBreakdown:
    cls, intra, text_sep = (float(v) for v in sums / steps)
    return total_loss(cls, intra, text_sep, config.loss_weights())


def train(task: FewShotTask, config: TrainConfig) -> TrainedModel:
    """
    Train a prototype bank (and adapter) on a few-shot task.

    Each step minimizes ``cls + alpha * intra + beta * text_sep`` with SGD. The classification loss uses
    Euclidean distance; class centers and intra-class Gaussians stay frozen at their first-epoch values.

    :param task: Few-shot task.
    :param config: Training configuration.
    :return: TrainedModel with test Gaussians from the final adapted training features.
    :raises NonFiniteLossError: If a loss or parameter diverges; the epoch and step are recorded.
    """
    if task.shots != config.shots:
        log.warning(f"Task shots={task.shots} differ from config shots={config.shots}; using the config value")

    init_rng, shuffle_rng = _seeded_generators(config.seed)
    bank = _init_bank(task, config, init_rng)
    prototypes = bank.prototypes.copy()
    weight = np.eye(task.dimension)

    inputs = task.train.features
    labels = task.train.labels
    weights = config.loss_weights()
    params = config.shrinkage_params()
    build_gaussians = _gaussian_builder(config)
    unified = config.shots <= config.unified_cov_threshold

    log.info(
        f"Training start classes={task.class_count} shots={config.shots} dim={task.dimension} "
        f"heads={config.heads} epochs={config.epochs} alpha={weights.alpha} beta={weights.beta} unified={unified}"
    )

    first_epoch_features = VisualAdapter(weight, config.adapter_enabled).apply(inputs)
    centers = _class_means(first_epoch_features, labels, task.class_count)
    if config.intra_metric is IntraMetric.MAHALANOBIS:
        frozen = build_gaussians(first_epoch_features, labels, task.class_count, params)
    else:
        frozen = identity_gaussians(centers)

    velocity_p = np.zeros_like(prototypes)
    velocity_w = np.zeros_like(weight)
    loss_trace = []

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config)
        order = shuffle_rng.permutation(inputs.shape[0])
        sums = np.zeros(3)
        steps = 0

        for step, start in enumerate(range(0, order.size, config.batch_size)):
            batch = order[start : start + config.batch_size]
            batch_inputs = inputs[batch]
            batch_labels = labels[batch]
            batch_features = VisualAdapter(weight, config.adapter_enabled).apply(batch_inputs)
            current = PrototypeBank(prototypes=prototypes, normalized=bank.normalized)

            try:
                cls = loss_cls(batch_features, batch_labels, current, config.tau, config.epsilon)
                intra = _intra_term(batch_features, batch_labels, centers, frozen, config.intra_metric)
                separation = _separation_term(current, weights.beta)
                total_loss(cls.value, intra.value, separation.value, weights)
            except NonFiniteLossError as e:
                log.exception(f"Training FAILED epoch={epoch} step={step}")
                raise NonFiniteLossError(str(e), epoch=epoch, step=step) from e

            grad_p = cls.prototypes + weights.beta * separation.prototypes
            velocity_p = config.momentum * velocity_p + grad_p
            prototypes = prototypes - lr * velocity_p
            if bank.normalized:
                prototypes = _normalize_rows(prototypes)

            if config.adapter_enabled:
                grad_f = cls.features + weights.alpha * intra.features
                velocity_w = config.momentum * velocity_w + adapter_gradient(batch_inputs, grad_f)
                weight = weight - lr * config.adapter_lr_scale * velocity_w

            if not (np.all(np.isfinite(prototypes)) and np.all(np.isfinite(weight))):
                log.error(f"Parameters diverged epoch={epoch} step={step} lr={lr}")
                raise NonFiniteLossError("Parameters became non-finite", epoch=epoch, step=step)

            sums += (cls.value, intra.value, separation.value)
            steps += 1

        loss_trace.append(_mean_breakdown(sums, steps, config))
        log.debug(f"Epoch done epoch={epoch} lr={lr:.3g} total={loss_trace[-1].total:.6g}")

    adapter = VisualAdapter(weight=weight, enabled=config.adapter_enabled)
    test_gaussians = build_gaussians(adapter.apply(inputs), labels, task.class_count, params)
    log.info(f"Training done final_total={loss_trace[-1].total:.6g}")

    return TrainedModel(
        bank=PrototypeBank(prototypes=prototypes, normalized=bank.normalized),
        adapter=adapter,
        test_gaussians=test_gaussians,
        frozen_intra_gaussians=list(frozen),
        centers=centers,
        loss_trace=tuple(loss_trace),
        config=config,
        unified_covariance=unified,
    )


def predict(model: TrainedModel, features: ArrayLike, mode: DistanceMode) -> NDArray[np.int64]:
    """
    Classify rows of ``features`` with a trained model.

    :param model: Trained model.
    :param features: (N, D) features before the adapter.
    :param mode: Distance mode.
    :return: (N,) predicted classes.
    """
    config = model.config
    return classify_batch(
        model.adapter.apply(features),
        model.bank,
        mode,
        model.test_gaussians if mode is DistanceMode.MAHALANOBIS else None,
        tau=config.tau,
        epsilon=config.epsilon,
        center=config.mahalanobis_center,
    )


def evaluate(model: TrainedModel, test_set: EmbeddingSet, mode: DistanceMode) -> EvaluationResult:
    """
    Top-1 and per-class accuracy of a trained model.

    :param model: Trained model.
    :param test_set: Labeled evaluation set.
    :param mode: Distance mode.
    :return: EvaluationResult.
    :raises DimensionMismatchError: If the set's dimension differs from the model's.
    """
    if test_set.dimension != model.bank.dimension:
        raise DimensionMismatchError(f"Test dimension {test_set.dimension} does not match {model.bank.dimension}")
    if test_set.size == 0:
        raise EmptyClassError("Cannot evaluate on an empty test set")

    predictions = predict(model, test_set.features, mode)
    correct = predictions == test_set.labels
    per_class = {int(c): float(np.mean(correct[test_set.labels == c])) for c in np.unique(test_set.labels)}
    accuracy = float(np.mean(correct))
    log.debug(f"Evaluated mode={mode.value} accuracy={accuracy:.4f} n={test_set.size}")
    return EvaluationResult(
        accuracy=accuracy,
        per_class_accuracy=per_class,
        predictions=tuple(int(p) for p in predictions),
    )

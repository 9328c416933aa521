import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from covariance_fewshot.core import ClassGaussian, DistanceMode, mahalanobis_sq_batch
from covariance_fewshot.data import EmbeddingSet, sample_few_shot
from covariance_fewshot.errors import FactorizationMissingError
from covariance_fewshot.experiments.report import CellKey, CellResult, LossPoint
from covariance_fewshot.training import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

ALL_MODES = (DistanceMode.COSINE, DistanceMode.EUCLIDEAN, DistanceMode.MAHALANOBIS)


@dataclass(frozen=True)
class CellJob:
    """
    One training run evaluated in one or more distance modes.

    Attributes:
        config (TrainConfig): Full configuration, seed included.
        modes (tuple[DistanceMode, ...]): Modes the trained model is evaluated in.
    """

    config: TrainConfig
    modes: tuple[DistanceMode, ...] = ALL_MODES

    def key(self, mode: DistanceMode) -> CellKey:
        config = self.config
        return CellKey(
            shots=config.shots,
            mode=mode,
            heads=config.heads,
            alpha=config.weights.alpha,
            beta=config.weights.beta,
            gamma1=config.shrinkage.gamma1,
            gamma2=config.shrinkage.gamma2,
        )

    def failed(self, error: Exception) -> list[CellResult]:
        message = f"{type(error).__name__}: {error}"
        return [CellResult(key=self.key(mode), seed=self.config.seed, error=message) for mode in self.modes]


def measure_logdet_agreement(gaussians: Sequence[ClassGaussian], features: ArrayLike) -> float:
    """
    Fraction of rows where the covariance-only decision equals the full log-likelihood decision.

    The first rule is ``argmin_y d_m(x, y)``; the second adds ``log|S_y|`` of each class's shrunk
    covariance. Both measure from the Gaussians' own means. The rules agree everywhere when all
    classes share one covariance.

    :param gaussians: Per-class Gaussians with factorizations.
    :param features: (N, D) features.
    :return: Agreement rate in [0, 1].
    """
    for g in gaussians:
        if g.factorization is None:
            raise FactorizationMissingError(f"Gaussian of class {g.class_id} has no factorization")

    distances = np.stack([mahalanobis_sq_batch(features, g) for g in gaussians], axis=1)
    logdets = np.array([2.0 * np.sum(np.log(np.diag(g.factorization))) for g in gaussians])  # type: ignore[arg-type]
    covariance_only = np.argmin(distances, axis=1)
    full_likelihood = np.argmin(distances + logdets[None, :], axis=1)
    return float(np.mean(covariance_only == full_likelihood))


def run_cell(embeddings: EmbeddingSet, job: CellJob) -> list[CellResult]:
    """
    Sample the task, train once and evaluate in every requested mode.

    :param embeddings: Source data.
    :param job: Configuration and modes.
    :return: One CellResult per mode, in ``job.modes`` order.
    """
    config = job.config
    log.info(f"Cell start shots={config.shots} seed={config.seed} heads={config.heads} modes={len(job.modes)}")
    task = sample_few_shot(embeddings, config.shots, config.seed)
    model = train(task, config)

    trace = [LossPoint.from_breakdown(b) for b in model.loss_trace]
    agreement = measure_logdet_agreement(model.test_gaussians, model.adapter.apply(task.test.features))

    results = []
    for mode in job.modes:
        evaluation = evaluate(model, task.test, mode)
        results.append(
            CellResult(
                key=job.key(mode),
                seed=config.seed,
                accuracy=evaluation.accuracy,
                per_class_accuracy={str(c): acc for c, acc in evaluation.per_class_accuracy.items()},
                loss_trace=trace,
                logdet_agreement=agreement if mode is DistanceMode.MAHALANOBIS else None,
            )
        )
    log.info(
        f"Cell done shots={config.shots} seed={config.seed} "
        + " ".join(f"{r.key.mode.value}={r.accuracy:.4f}" for r in results)
    )
    return results

"""
Synthetic anisotropic-Gaussian benchmark with a Bayes-optimal oracle.

Each class is a multivariate normal whose mean lies on a sphere of radius ``mean_scale`` and whose
covariance is a random rotation of log-uniformly spread eigenvalues with a condition number drawn
from ``cond_range``. The true parameters are returned alongside the samples so tests can compare a
trained classifier with the best achievable accuracy.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cholesky
from scipy.stats import multivariate_normal, ortho_group

from covariance_fewshot.data.embeddings import EmbeddingSet, make_embedding_set
from covariance_fewshot.errors import DimensionMismatchError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Parameters of the synthetic benchmark.

    Attributes:
        class_count (int): Number of classes C, at least 2.
        dimension (int): Feature dimension D.
        per_class (int): Samples drawn per class.
        mean_scale (float): Radius of the sphere class means are drawn on.
        noise_scale (float): Average per-dimension variance of every class.
        cond_range (tuple[float, float]): Range of per-class covariance condition numbers.
        seed (int): Generator seed.
        normalize (bool): L2-normalize the generated features.
    """

    class_count: int = 10
    dimension: int = 64
    per_class: int = 100
    mean_scale: float = 1.0
    noise_scale: float = 0.1
    cond_range: tuple[float, float] = (5.0, 50.0)
    seed: int = 1
    normalize: bool = False

    def __post_init__(self) -> None:
        if self.class_count < 2:
            raise ValueError(f"At least 2 classes are required, got {self.class_count}")
        if self.dimension < 1 or self.per_class < 1:
            raise ValueError(f"Dimension and per-class count must be positive, got {self.dimension}, {self.per_class}")
        if not (self.mean_scale > 0 and self.noise_scale > 0):
            raise ValueError("Mean and noise scales must be positive.")
        low, high = self.cond_range
        if not (1.0 <= low <= high and math.isfinite(high)):
            raise ValueError(f"Condition-number range must satisfy 1 <= low <= high, got {self.cond_range}")
        if self.seed < 0:
            raise ValueError(f"Seed must be non-negative, got {self.seed}")

    @property
    def isotropic(self) -> bool:
        return self.cond_range[1] == 1.0


@dataclass(frozen=True, eq=False)
class OracleParameters:
    """
    True generative parameters.

    Attributes:
        means (NDArray): (C, D) class means.
        covariances (NDArray): (C, D, D) class covariances.
    """

    means: NDArray[np.float64]
    covariances: NDArray[np.float64]

    @property
    def class_count(self) -> int:
        return int(self.means.shape[0])


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    embeddings: EmbeddingSet
    oracle: OracleParameters
    spec: SyntheticSpec


def _random_covariance(rng: np.random.Generator, spec: SyntheticSpec) -> NDArray[np.float64]:
    dim = spec.dimension
    if spec.isotropic:
        return spec.noise_scale * np.eye(dim)

    low, high = spec.cond_range
    condition = math.exp(rng.uniform(math.log(low), math.log(high)))

    exponents = rng.uniform(0.0, 1.0, size=dim)
    if dim >= 2:
        exponents[:2] = (0.0, 1.0)
    eigenvalues = condition**exponents
    eigenvalues *= spec.noise_scale / eigenvalues.mean()

    rotation = ortho_group.rvs(dim, random_state=rng) if dim >= 2 else np.ones((1, 1))
    cov = (rotation * eigenvalues) @ rotation.T
    return 0.5 * (cov + cov.T)


def gen_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """
    Generate a labeled synthetic set and its true class parameters.

    Features are rounded to float32 so that a CAMF round trip is bit-exact.

    :param spec: Benchmark parameters.
    :return: SyntheticDataset with embeddings and oracle parameters.
    """
    log.info(
        f"Generating synthetic set start C={spec.class_count} D={spec.dimension} "
        f"per_class={spec.per_class} cond_range={spec.cond_range} seed={spec.seed}"
    )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))

    directions = rng.standard_normal((spec.class_count, spec.dimension))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = spec.mean_scale * directions

    covariances = np.empty((spec.class_count, spec.dimension, spec.dimension))
    blocks = []
    for c in range(spec.class_count):
        covariances[c] = _random_covariance(rng, spec)
        factor = cholesky(covariances[c], lower=True)
        noise = rng.standard_normal((spec.per_class, spec.dimension))
        blocks.append(means[c] + noise @ factor.T)

    features = np.concatenate(blocks)
    if spec.normalize:
        features /= np.linalg.norm(features, axis=1, keepdims=True)
    features = features.astype(np.float32).astype(np.float64)
    labels = np.repeat(np.arange(spec.class_count), spec.per_class)

    embeddings = make_embedding_set(features, labels)
    if spec.normalize:
        embeddings = EmbeddingSet(
            features=embeddings.features, labels=embeddings.labels, class_names=embeddings.class_names, normalized=True
        )

    log.info(f"Generating synthetic set done N={embeddings.size}")
    return SyntheticDataset(
        embeddings=embeddings, oracle=OracleParameters(means=means, covariances=covariances), spec=spec
    )


def _log_likelihoods(features: NDArray[np.float64], oracle: OracleParameters) -> NDArray[np.float64]:
    if features.shape[1] != oracle.means.shape[1]:
        raise DimensionMismatchError(f"Feature dimension {features.shape[1]} does not match {oracle.means.shape[1]}")
    columns = [
        np.atleast_1d(multivariate_normal.logpdf(features, mean=oracle.means[c], cov=oracle.covariances[c]))
        for c in range(oracle.class_count)
    ]
    return np.stack(columns, axis=1)


def bayes_oracle_predict(features: ArrayLike, oracle: OracleParameters) -> NDArray[np.int64]:
    """
    Maximum-likelihood class of each row under the true Gaussians, log-determinant included.

    :param features: (N, D) features.
    :param oracle: True parameters from ``gen_synthetic``.
    :return: (N,) predicted classes, lowest index on ties.
    """
    matrix = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return np.argmax(_log_likelihoods(matrix, oracle), axis=1).astype(np.int64)


def bayes_oracle(x: ArrayLike, oracle: OracleParameters) -> int:
    """
    Maximum-likelihood class of one feature under the true Gaussians.

    :param x: (D,) feature.
    :param oracle: True parameters from ``gen_synthetic``.
    :return: Class index.
    """
    return int(bayes_oracle_predict(np.asarray(x, dtype=np.float64)[None, :], oracle)[0])

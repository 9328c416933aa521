import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import softmax

from covariance_fewshot.core.gaussian_core import ClassGaussian, mahalanobis_sq_batch
from covariance_fewshot.errors import DimensionMismatchError, MissingGaussiansError

log = logging.getLogger(__name__)

DEFAULT_TAU = 1.0
DEFAULT_EPSILON = 1e-6
NORM_FLOOR = 1e-12


class DistanceMode(str, Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"
    MAHALANOBIS = "mahalanobis"


class MahalanobisCenter(str, Enum):
    """
    Point each head measures Mahalanobis distance from.

    PROTOTYPE pairs the trained per-head prototype with the shared class covariance;
    FEATURE_MEAN uses the Gaussian's own feature mean for every head.
    """

    PROTOTYPE = "prototype"
    FEATURE_MEAN = "feature_mean"


@dataclass(frozen=True, eq=False)
class PrototypeBank:
    """
    M learnable prototype vectors for each of C classes.

    Attributes:
        prototypes (NDArray): Array of shape (C, M, D).
        normalized (bool): Whether prototypes are kept at unit L2 norm.
    """

    prototypes: NDArray[np.float64]
    normalized: bool = True

    def __post_init__(self) -> None:
        if self.prototypes.ndim != 3:
            raise DimensionMismatchError(f"Prototypes must have shape (C, M, D), got {self.prototypes.shape}")
        if self.prototypes.shape[0] < 1 or self.prototypes.shape[1] < 1:
            raise DimensionMismatchError("A prototype bank needs at least one class and one head.")

    @property
    def class_count(self) -> int:
        return int(self.prototypes.shape[0])

    @property
    def heads(self) -> int:
        return int(self.prototypes.shape[1])

    @property
    def dimension(self) -> int:
        return int(self.prototypes.shape[2])

    def head(self, m: int) -> NDArray[np.float64]:
        """
        Prototypes of one head for all classes.

        :param m: Head index in ``[0, M)``.
        :return: (C, D) array.
        """
        if not 0 <= m < self.heads:
            raise IndexError(f"Head {m} out of range for M={self.heads}")
        return self.prototypes[:, m, :]

    def flattened(self) -> NDArray[np.float64]:
        """The M*C prototypes as a (C*M, D) array, class-major."""
        return self.prototypes.reshape(-1, self.dimension)


@dataclass(frozen=True)
class Prediction:
    """
    Ensemble prediction for one feature.

    Attributes:
        probabilities (NDArray): (C,) head-averaged class probabilities.
        chosen_class (int): Argmax of ``probabilities``, lowest index on ties.
        per_head_probabilities (NDArray): (M, C) probabilities of each head.
    """

    probabilities: NDArray[np.float64]
    chosen_class: int
    per_head_probabilities: NDArray[np.float64]


def _validate_temperature(tau: float, epsilon: float) -> None:
    if not tau > 0:
        raise ValueError(f"Temperature tau must be positive, got {tau}")
    if not epsilon >= 0:
        raise ValueError(f"Stability epsilon must be non-negative, got {epsilon}")


def probabilities_from_distances(distances: ArrayLike, tau: float, epsilon: float) -> NDArray[np.float64]:
    """
    Softmax over logits ``tau / (d + epsilon)``, row-wise.

    :param distances: (C,) or (N, C) non-negative distances.
    :param tau: Temperature, positive.
    :param epsilon: Stability offset; must keep every ``d + epsilon`` positive.
    :return: Probabilities of the same shape, each row summing to 1.
    """
    _validate_temperature(tau, epsilon)
    shifted = np.asarray(distances, dtype=np.float64) + epsilon
    if np.any(shifted <= 0):
        raise ValueError("Every distance plus epsilon must be positive.")
    # scipy's softmax subtracts the row maximum before exponentiating
    return softmax(tau / shifted, axis=-1)


def probabilities_from_cosines(cosines: ArrayLike, tau: float) -> NDArray[np.float64]:
    """
    Softmax over logits ``cos / tau``, row-wise.

    :param cosines: (C,) or (N, C) cosine similarities.
    :param tau: Temperature, positive.
    :return: Probabilities of the same shape.
    """
    _validate_temperature(tau, 0.0)
    return softmax(np.asarray(cosines, dtype=np.float64) / tau, axis=-1)


def _cosine_matrix(features: NDArray[np.float64], prototypes: NDArray[np.float64]) -> NDArray[np.float64]:
    # zero vectors get cosine 0 against everything
    feature_norms = np.maximum(np.linalg.norm(features, axis=1, keepdims=True), NORM_FLOOR)
    prototype_norms = np.maximum(np.linalg.norm(prototypes, axis=1, keepdims=True), NORM_FLOOR)
    return (features / feature_norms) @ (prototypes / prototype_norms).T


def _squared_euclidean_matrix(features: NDArray[np.float64], prototypes: NDArray[np.float64]) -> NDArray[np.float64]:
    diff = features[:, None, :] - prototypes[None, :, :]
    return np.einsum("ncd,ncd->nc", diff, diff)


def _require_gaussians(
    gaussians: Sequence[ClassGaussian] | None, class_count: int
) -> Sequence[ClassGaussian]:
    if gaussians is None:
        raise MissingGaussiansError("Mahalanobis mode requires one ClassGaussian per class.")
    if len(gaussians) != class_count:
        raise MissingGaussiansError(f"Expected {class_count} class Gaussians, got {len(gaussians)}")
    return gaussians


def _as_query_matrix(features: ArrayLike, dimension: int) -> NDArray[np.float64]:
    matrix = np.asarray(features, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.ndim != 2 or matrix.shape[1] != dimension:
        raise DimensionMismatchError(f"Feature shape {matrix.shape} does not match prototype dimension {dimension}")
    return matrix


def distance_matrix(
    features: ArrayLike,
    bank: PrototypeBank,
    head: int,
    mode: DistanceMode,
    gaussians: Sequence[ClassGaussian] | None = None,
    center: MahalanobisCenter = MahalanobisCenter.PROTOTYPE,
) -> NDArray[np.float64]:
    """
    Distances (or cosine similarities, in COSINE mode) from each feature to each class for one head.

    :param features: (N, D) or (D,) features.
    :param bank: Prototype bank.
    :param head: Head index.
    :param mode: Distance mode.
    :param gaussians: Per-class Gaussians, required in MAHALANOBIS mode.
    :param center: Which point a Mahalanobis distance is measured from.
    :return: (N, C) matrix.
    """
    matrix = _as_query_matrix(features, bank.dimension)
    prototypes = bank.head(head)

    if mode is DistanceMode.COSINE:
        return _cosine_matrix(matrix, prototypes)
    if mode is DistanceMode.EUCLIDEAN:
        return _squared_euclidean_matrix(matrix, prototypes)

    models = _require_gaussians(gaussians, bank.class_count)
    columns = [
        mahalanobis_sq_batch(matrix, g, center=prototypes[c] if center is MahalanobisCenter.PROTOTYPE else None)
        for c, g in enumerate(models)
    ]
    return np.stack(columns, axis=1)


def _head_probabilities(
    distances: NDArray[np.float64], mode: DistanceMode, tau: float, epsilon: float
) -> NDArray[np.float64]:
    if mode is DistanceMode.COSINE:
        return probabilities_from_cosines(distances, tau)
    return probabilities_from_distances(distances, tau, epsilon)


def predict_proba(
    f: ArrayLike,
    bank: PrototypeBank,
    head: int,
    mode: DistanceMode,
    gaussians: Sequence[ClassGaussian] | None = None,
    tau: float = DEFAULT_TAU,
    epsilon: float = DEFAULT_EPSILON,
    center: MahalanobisCenter = MahalanobisCenter.PROTOTYPE,
) -> NDArray[np.float64]:
    """
    Class probabilities of one feature under one head.

    Distance modes use logits ``tau / (d + epsilon)``; cosine mode uses ``cos / tau``.

    :param f: (D,) feature.
    :param bank: Prototype bank.
    :param head: Head index in ``[0, M)``.
    :param mode: Distance mode.
    :param gaussians: Per-class Gaussians, required in MAHALANOBIS mode.
    :param tau: Temperature.
    :param epsilon: Stability offset.
    :param center: Which point a Mahalanobis distance is measured from.
    :return: (C,) probabilities summing to 1.
    """
    distances = distance_matrix(f, bank, head, mode, gaussians, center)[0]
    return _head_probabilities(distances, mode, tau, epsilon)


def ensemble_predict_batch(
    features: ArrayLike,
    bank: PrototypeBank,
    mode: DistanceMode,
    gaussians: Sequence[ClassGaussian] | None = None,
    tau: float = DEFAULT_TAU,
    epsilon: float = DEFAULT_EPSILON,
    center: MahalanobisCenter = MahalanobisCenter.PROTOTYPE,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Head-averaged probabilities for a batch of features.

    :param features: (N, D) features.
    :param bank: Prototype bank.
    :param mode: Distance mode.
    :param gaussians: Per-class Gaussians, required in MAHALANOBIS mode.
    :param tau: Temperature.
    :param epsilon: Stability offset.
    :param center: Which point a Mahalanobis distance is measured from.
    :return: ``(mean_probabilities (N, C), per_head_probabilities (M, N, C))``.
    """
    per_head = np.stack(
        [
            _head_probabilities(distance_matrix(features, bank, m, mode, gaussians, center), mode, tau, epsilon)
            for m in range(bank.heads)
        ]
    )
    averaged = per_head.mean(axis=0)
    averaged /= averaged.sum(axis=-1, keepdims=True)
    return averaged, per_head


def ensemble_predict(
    f: ArrayLike,
    bank: PrototypeBank,
    mode: DistanceMode,
    gaussians: Sequence[ClassGaussian] | None = None,
    tau: float = DEFAULT_TAU,
    epsilon: float = DEFAULT_EPSILON,
    center: MahalanobisCenter = MahalanobisCenter.PROTOTYPE,
) -> Prediction:
    """
    Average the per-head probabilities of one feature and pick the most probable class.

    :param f: (D,) feature.
    :param bank: Prototype bank with M >= 1 heads.
    :param mode: Distance mode.
    :param gaussians: Per-class Gaussians, required in MAHALANOBIS mode.
    :param tau: Temperature.
    :param epsilon: Stability offset.
    :param center: Which point a Mahalanobis distance is measured from.
    :return: Prediction with averaged and per-head probabilities.
    """
    averaged, per_head = ensemble_predict_batch(f, bank, mode, gaussians, tau, epsilon, center)
    probabilities = averaged[0]
    return Prediction(
        probabilities=probabilities,
        chosen_class=int(np.argmax(probabilities)),
        per_head_probabilities=per_head[:, 0, :],
    )


def classify(
    f: ArrayLike,
    bank: PrototypeBank,
    mode: DistanceMode,
    gaussians: Sequence[ClassGaussian] | None = None,
    tau: float = DEFAULT_TAU,
    epsilon: float = DEFAULT_EPSILON,
    center: MahalanobisCenter = MahalanobisCenter.PROTOTYPE,
) -> int:
    """
    Decide the class of one feature.

    With a single head this is the argmin of the distance (argmax of cosine), which the
    softmax preserves. With several heads the decision is the argmax of the head-averaged
    probabilities, so it always agrees with ``ensemble_predict``. Ties go to the lowest index.

    :param f: (D,) feature.
    :param bank: Prototype bank.
    :param mode: Distance mode.
    :param gaussians: Per-class Gaussians, required in MAHALANOBIS mode.
    :param tau: Temperature, used only when M > 1.
    :param epsilon: Stability offset, used only when M > 1.
    :param center: Which point a Mahalanobis distance is measured from.
    :return: Class index.
    """
    return int(classify_batch(f, bank, mode, gaussians, tau, epsilon, center)[0])


def classify_batch(
    features: ArrayLike,
    bank: PrototypeBank,
    mode: DistanceMode,
    gaussians: Sequence[ClassGaussian] | None = None,
    tau: float = DEFAULT_TAU,
    epsilon: float = DEFAULT_EPSILON,
    center: MahalanobisCenter = MahalanobisCenter.PROTOTYPE,
) -> NDArray[np.int64]:
    """
    Row-wise ``classify`` for an (N, D) batch.

    :return: (N,) class indices.
    """
    if bank.heads == 1:
        scores = distance_matrix(features, bank, 0, mode, gaussians, center)
        decision = np.argmax(scores, axis=1) if mode is DistanceMode.COSINE else np.argmin(scores, axis=1)
    else:
        averaged, _ = ensemble_predict_batch(features, bank, mode, gaussians, tau, epsilon, center)
        decision = np.argmax(averaged, axis=1)
    return decision.astype(np.int64)

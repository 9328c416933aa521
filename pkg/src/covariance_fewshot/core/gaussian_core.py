import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from covariance_fewshot.errors import (
    CholeskyFailureError,
    DimensionMismatchError,
    EmptyClassError,
    FactorizationMissingError,
    NonPositiveDiagonalError,
)

log = logging.getLogger(__name__)

FeatureVector = NDArray[np.float64]
SymMatrix = NDArray[np.float64]

SYMMETRY_TOLERANCE = 1e-12
UNIT_NORM_TOLERANCE = 1e-6


class ShrinkageConvention(str, Enum):
    """
    Which average scales which mask in the shrinkage target.

    FECAM: diagonal average on the identity, off-diagonal average on the off-diagonal mask.
    LITERAL: the swapped pairing, kept for fidelity experiments; may yield indefinite matrices.
    """

    FECAM = "fecam"
    LITERAL = "literal"


@dataclass(frozen=True)
class ShrinkageParams:
    """
    Shrinkage strengths for the identity and off-diagonal targets.

    Attributes:
        gamma1 (float): Weight of the identity-mask target.
        gamma2 (float): Weight of the off-diagonal-mask target.
        convention (ShrinkageConvention): Pairing of averages and masks.
    """

    gamma1: float
    gamma2: float
    convention: ShrinkageConvention = ShrinkageConvention.FECAM

    def __post_init__(self) -> None:
        if not (np.isfinite(self.gamma1) and np.isfinite(self.gamma2)):
            raise ValueError("Shrinkage gammas must be finite.")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError(f"Shrinkage gammas must be non-negative, got gamma1={self.gamma1} gamma2={self.gamma2}.")


@dataclass(frozen=True, eq=False)
class ClassGaussian:
    """
    Per-class Gaussian model with a cached Cholesky factor of its shrunk, normalized covariance.

    Instances are immutable: their arrays are marked read-only on construction.

    Attributes:
        class_id (int): Class index.
        mean (FeatureVector): Class mean.
        raw_cov (SymMatrix): Biased sample covariance.
        shrunk_cov (SymMatrix): Shrunk and correlation-normalized covariance (SPD).
        factorization (NDArray | None): Lower Cholesky factor of ``shrunk_cov``.
        sample_count (int): Number of samples the model was estimated from.
    """

    class_id: int
    mean: FeatureVector
    raw_cov: SymMatrix
    shrunk_cov: SymMatrix
    factorization: NDArray[np.float64] | None
    sample_count: int

    def __post_init__(self) -> None:
        for array in (self.mean, self.raw_cov, self.shrunk_cov, self.factorization):
            if array is not None:
                array.setflags(write=False)

    @property
    def dimension(self) -> int:
        return int(self.mean.shape[0])


def as_feature_matrix(samples: ArrayLike | Sequence[ArrayLike]) -> NDArray[np.float64]:
    """
    Stack samples into an (N, D) float64 matrix, validating shape.

    :param samples: A sequence of D-dimensional vectors or an (N, D) array.
    :return: The samples as a 2-D float64 array.
    :raises EmptyClassError: If there are no samples.
    :raises DimensionMismatchError: If the samples do not share one dimension.
    """
    if isinstance(samples, np.ndarray):
        matrix = np.asarray(samples, dtype=np.float64)
    else:
        rows = [np.asarray(sample, dtype=np.float64) for sample in samples]  # type: ignore[union-attr]
        if not rows:
            raise EmptyClassError("Cannot estimate statistics from an empty sample set.")
        dims = {row.shape for row in rows}
        if len(dims) != 1:
            raise DimensionMismatchError(f"Samples have mixed shapes: {sorted(dims)}")
        matrix = np.stack(rows)

    if matrix.ndim != 2:
        raise DimensionMismatchError(f"Expected an (N, D) sample matrix, got shape {matrix.shape}")
    if matrix.shape[0] == 0:
        raise EmptyClassError("Cannot estimate statistics from an empty sample set.")
    return matrix


def _check_symmetric(cov: NDArray[np.float64]) -> None:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatchError(f"Covariance must be square, got shape {cov.shape}")
    scale = np.maximum(1.0, np.abs(cov))
    if np.any(np.abs(cov - cov.T) > SYMMETRY_TOLERANCE * scale):
        raise ValueError("Covariance matrix is not symmetric.")


def estimate_mean(samples: ArrayLike | Sequence[ArrayLike]) -> FeatureVector:
    """
    Arithmetic mean of the samples.

    Rows are reduced in a fixed order, so repeated calls are bit-identical.

    :param samples: Non-empty samples of a common dimension.
    :return: The mean vector.
    """
    matrix = as_feature_matrix(samples)
    return np.add.reduce(matrix, axis=0) / matrix.shape[0]


def estimate_covariance(samples: ArrayLike | Sequence[ArrayLike], mean: ArrayLike) -> SymMatrix:
    """
    Biased (1/N) maximum-likelihood covariance of the samples around ``mean``.

    :param samples: Non-empty samples of a common dimension.
    :param mean: Mean vector to center on.
    :return: An exactly symmetric (D, D) covariance.
    """
    matrix = as_feature_matrix(samples)
    center = np.asarray(mean, dtype=np.float64)
    if center.shape != (matrix.shape[1],):
        raise DimensionMismatchError(f"Mean shape {center.shape} does not match sample dimension {matrix.shape[1]}")

    centered = matrix - center
    cov = (centered.T @ centered) / matrix.shape[0]
    # floating addition is commutative, so this is exactly symmetric
    return (cov + cov.T) / 2.0


def shrink(cov: ArrayLike, params: ShrinkageParams) -> SymMatrix:
    """
    Blend the covariance with scaled identity and off-diagonal targets.

    FECAM convention: ``cov + gamma1 * V_diag * I + gamma2 * V_off * (1 - I)`` where ``V_diag`` is the
    mean diagonal entry and ``V_off`` the mean off-diagonal entry. LITERAL swaps the two averages.

    :param cov: Symmetric (D, D) matrix.
    :param params: Shrinkage strengths and convention.
    :return: The shrunk symmetric matrix.
    """
    matrix = np.asarray(cov, dtype=np.float64)
    _check_symmetric(matrix)
    dim = matrix.shape[0]

    identity = np.eye(dim)
    off_mask = np.ones((dim, dim)) - identity

    v_diag = float(np.mean(np.diag(matrix)))
    v_off = float(np.sum(matrix * off_mask) / (dim * (dim - 1))) if dim > 1 else 0.0

    if params.convention is ShrinkageConvention.FECAM:
        on_identity, on_off_diagonal = v_diag, v_off
    else:
        on_identity, on_off_diagonal = v_off, v_diag

    shrunk = matrix + params.gamma1 * on_identity * identity + params.gamma2 * on_off_diagonal * off_mask
    return (shrunk + shrunk.T) / 2.0


def normalize_cov(cov: ArrayLike) -> SymMatrix:
    """
    Correlation-normalize a covariance: ``cov[i, j] / (sqrt(cov[i, i]) * sqrt(cov[j, j]))``.

    :param cov: Symmetric matrix with strictly positive diagonal.
    :return: Symmetric matrix with an exactly unit diagonal.
    :raises NonPositiveDiagonalError: If any diagonal entry is not strictly positive.
    """
    matrix = np.asarray(cov, dtype=np.float64)
    _check_symmetric(matrix)
    diagonal = np.diag(matrix)
    bad = np.flatnonzero(~(diagonal > 0))
    if bad.size:
        raise NonPositiveDiagonalError(f"Cannot normalize: non-positive variance at indices {bad.tolist()[:8]}")

    scale = np.sqrt(diagonal)
    normalized = matrix / np.outer(scale, scale)
    normalized = (normalized + normalized.T) / 2.0
    np.fill_diagonal(normalized, 1.0)
    return normalized


def factorize(cov: ArrayLike) -> NDArray[np.float64]:
    """
    Lower Cholesky factor of a symmetric positive definite matrix.

    :param cov: SPD matrix.
    :return: Lower-triangular L with ``L @ L.T == cov``.
    :raises CholeskyFailureError: If the matrix is not positive definite.
    """
    try:
        return cholesky(np.asarray(cov, dtype=np.float64), lower=True, check_finite=True)
    except (LinAlgError, ValueError) as e:
        raise CholeskyFailureError(f"Covariance is not positive definite: {e}") from e


def _center_for(g: ClassGaussian, center: ArrayLike | None) -> FeatureVector:
    if center is None:
        return g.mean
    vector = np.asarray(center, dtype=np.float64)
    if vector.shape != g.mean.shape:
        raise DimensionMismatchError(f"Center shape {vector.shape} does not match Gaussian dimension {g.dimension}")
    return vector


def mahalanobis_sq(x: ArrayLike, g: ClassGaussian, center: ArrayLike | None = None) -> float:
    """
    Squared Mahalanobis distance ``(x - c)^T shrunk_cov^{-1} (x - c)`` via a triangular solve.

    :param x: Query vector.
    :param g: Class Gaussian with a cached factorization.
    :param center: Point to measure from; defaults to ``g.mean``.
    :return: Non-negative squared distance.
    :raises FactorizationMissingError: If ``g`` has no Cholesky factor.
    """
    vector = np.asarray(x, dtype=np.float64)
    if vector.shape != g.mean.shape:
        raise DimensionMismatchError(f"Query shape {vector.shape} does not match Gaussian dimension {g.dimension}")
    if g.factorization is None:
        raise FactorizationMissingError(f"Gaussian of class {g.class_id} has no factorization")

    whitened = solve_triangular(g.factorization, vector - _center_for(g, center), lower=True)
    return float(whitened @ whitened)


def mahalanobis_sq_batch(features: ArrayLike, g: ClassGaussian, center: ArrayLike | None = None) -> NDArray[np.float64]:
    """
    Squared Mahalanobis distance of every row of ``features`` to one class.

    :param features: (N, D) query matrix.
    :param g: Class Gaussian with a cached factorization.
    :param center: Point to measure from; defaults to ``g.mean``.
    :return: (N,) squared distances.
    """
    matrix = np.asarray(features, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != g.dimension:
        raise DimensionMismatchError(f"Query shape {matrix.shape} does not match Gaussian dimension {g.dimension}")
    if g.factorization is None:
        raise FactorizationMissingError(f"Gaussian of class {g.class_id} has no factorization")

    whitened = solve_triangular(g.factorization, (matrix - _center_for(g, center)).T, lower=True)
    return np.einsum("ij,ij->j", whitened, whitened)


def _shrunk_normalized(raw_cov: SymMatrix, params: ShrinkageParams) -> SymMatrix:
    shrunk = shrink(raw_cov, params)
    if not np.any(np.diag(shrunk) > 0):
        # zero covariance carries no shape information; fall back to the isotropic shape
        log.debug("Zero covariance after shrinkage, substituting the identity shape")
        shrunk = np.eye(shrunk.shape[0])
    return normalize_cov(shrunk)


def _assemble(
    class_id: int, mean: FeatureVector, raw_cov: SymMatrix, shrunk_cov: SymMatrix, count: int
) -> ClassGaussian:
    factor = factorize(shrunk_cov)
    return ClassGaussian(
        class_id=class_id,
        mean=mean,
        raw_cov=raw_cov,
        shrunk_cov=shrunk_cov,
        factorization=factor,
        sample_count=count,
    )


def build_class_gaussian(
    samples: ArrayLike | Sequence[ArrayLike], params: ShrinkageParams, class_id: int = 0
) -> ClassGaussian:
    """
    Estimate a class Gaussian: mean, covariance, shrinkage, normalization and Cholesky factor.

    :param samples: Non-empty class samples.
    :param params: Shrinkage parameters.
    :param class_id: Class index recorded on the model.
    :return: Immutable ClassGaussian with a positive definite ``shrunk_cov``.
    :raises CholeskyFailureError: If the shrunk, normalized matrix is not positive definite.
    """
    matrix = as_feature_matrix(samples)
    mean = estimate_mean(matrix)
    raw_cov = estimate_covariance(matrix, mean)
    shrunk_cov = _shrunk_normalized(raw_cov, params)
    return _assemble(class_id, mean, raw_cov, shrunk_cov, matrix.shape[0])


def _class_rows(features: NDArray[np.float64], labels: NDArray[np.int64], class_id: int) -> NDArray[np.float64]:
    rows = features[labels == class_id]
    if rows.shape[0] == 0:
        raise EmptyClassError(f"Class {class_id} has no samples")
    return rows


def build_class_gaussians(
    features: ArrayLike, labels: ArrayLike, class_count: int, params: ShrinkageParams
) -> list[ClassGaussian]:
    """
    Estimate one Gaussian per class.

    :param features: (N, D) features.
    :param labels: (N,) integer labels in ``[0, class_count)``.
    :param class_count: Number of classes C.
    :param params: Shrinkage parameters.
    :return: C Gaussians ordered by class index.
    """
    matrix = as_feature_matrix(features)
    label_array = np.asarray(labels, dtype=np.int64)
    return [build_class_gaussian(_class_rows(matrix, label_array, c), params, class_id=c) for c in range(class_count)]


def build_unified_gaussians(
    features: ArrayLike, labels: ArrayLike, class_count: int, params: ShrinkageParams
) -> list[ClassGaussian]:
    """
    Estimate per-class means that all share one covariance pooled over every sample.

    All classes are treated as a single category for the covariance, which is then shrunk,
    normalized and factorized once; every returned Gaussian references the same matrices.

    :param features: (N, D) features.
    :param labels: (N,) integer labels in ``[0, class_count)``.
    :param class_count: Number of classes C.
    :param params: Shrinkage parameters.
    :return: C Gaussians sharing ``raw_cov``, ``shrunk_cov`` and ``factorization``.
    """
    matrix = as_feature_matrix(features)
    label_array = np.asarray(labels, dtype=np.int64)

    pooled_cov = estimate_covariance(matrix, estimate_mean(matrix))
    shrunk_cov = _shrunk_normalized(pooled_cov, params)
    shared = _assemble(-1, estimate_mean(matrix), pooled_cov, shrunk_cov, matrix.shape[0])

    gaussians = []
    for c in range(class_count):
        rows = _class_rows(matrix, label_array, c)
        gaussians.append(
            ClassGaussian(
                class_id=c,
                mean=estimate_mean(rows),
                raw_cov=shared.raw_cov,
                shrunk_cov=shared.shrunk_cov,
                factorization=shared.factorization,
                sample_count=rows.shape[0],
            )
        )
    log.debug(f"Unified covariance built classes={class_count} samples={matrix.shape[0]}")
    return gaussians


def identity_gaussians(centers: ArrayLike) -> list[ClassGaussian]:
    """
    Gaussians with identity covariance around the given centers.

    Mahalanobis distance under these models is the squared Euclidean distance.

    :param centers: (C, D) class centers.
    :return: C Gaussians with identity ``shrunk_cov`` and factor.
    """
    matrix = as_feature_matrix(centers)
    dim = matrix.shape[1]
    identity = np.eye(dim)
    return [
        ClassGaussian(
            class_id=c,
            mean=matrix[c].copy(),
            raw_cov=identity.copy(),
            shrunk_cov=identity.copy(),
            factorization=identity.copy(),
            sample_count=0,
        )
        for c in range(matrix.shape[0])
    ]

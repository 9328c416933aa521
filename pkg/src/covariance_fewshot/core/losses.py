"""
Training losses and their analytic gradients.

- ``loss_cls``: per-head softmax cross-entropy over logits ``tau / (||f - u||^2 + epsilon)``,
  averaged over the batch and summed over heads.
- ``loss_intra``: covariance-weighted pull of features towards frozen class centers.
- ``loss_text_sep``: negative sum of pairwise squared distances between normalized prototypes.
- ``total_loss``: ``cls + alpha * intra + beta * text_sep``.

Gradients are returned alongside values so the trainer never needs numerical differentiation.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_solve
from scipy.spatial.distance import pdist
from scipy.special import log_softmax, softmax

from covariance_fewshot.core.classifier import PrototypeBank
from covariance_fewshot.core.gaussian_core import ClassGaussian, identity_gaussians
from covariance_fewshot.errors import (
    DimensionMismatchError,
    EmptyClassError,
    FactorizationMissingError,
    LabelOutOfRangeError,
    MissingGaussiansError,
    NonFiniteLossError,
    TooFewPrototypesError,
)

log = logging.getLogger(__name__)


class IntraMetric(str, Enum):
    MAHALANOBIS = "mahalanobis"
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.1

    def __post_init__(self) -> None:
        for name, value in (("alpha", self.alpha), ("beta", self.beta)):
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"Loss weight {name} must be finite and non-negative, got {value}")


@dataclass(frozen=True)
class LossBreakdown:
    """
    Component losses and their weighted total.

    Attributes:
        cls (float): Classification loss.
        intra (float): Intra-class loss.
        text_sep (float): Prototype separation loss (non-positive).
        total (float): ``cls + alpha * intra + beta * text_sep``.
    """

    cls: float
    intra: float
    text_sep: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {"cls": self.cls, "intra": self.intra, "text_sep": self.text_sep, "total": self.total}


@dataclass(frozen=True)
class LossGradient:
    """
    Loss value with gradients for the parameters it depends on.

    Attributes:
        value (float): Loss value.
        prototypes (NDArray | None): Gradient w.r.t. bank prototypes, shape (C, M, D).
        features (NDArray | None): Gradient w.r.t. the input features, shape (N, D).
    """

    value: float
    prototypes: NDArray[np.float64] | None = None
    features: NDArray[np.float64] | None = None


def _validate_batch(
    features: ArrayLike, labels: ArrayLike, class_count: int, dimension: int
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    matrix = np.asarray(features, dtype=np.float64)
    label_array = np.asarray(labels, dtype=np.int64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise EmptyClassError(f"Loss batch must be a non-empty (N, D) matrix, got shape {matrix.shape}")
    if matrix.shape[1] != dimension:
        raise DimensionMismatchError(f"Feature dimension {matrix.shape[1]} does not match {dimension}")
    if label_array.shape != (matrix.shape[0],):
        raise DimensionMismatchError(f"Expected {matrix.shape[0]} labels, got shape {label_array.shape}")
    if np.any(label_array < 0) or np.any(label_array >= class_count):
        raise LabelOutOfRangeError(
            f"Labels must lie in [0, {class_count}), got range [{label_array.min()}, {label_array.max()}]"
        )
    return matrix, label_array


def loss_cls(
    features: ArrayLike, labels: ArrayLike, bank: PrototypeBank, tau: float, epsilon: float
) -> LossGradient:
    """
    Classification loss with Euclidean training distance, summed over heads.

    For each head m: ``mean_i -log softmax(tau / (||f_i - u_m||^2 + epsilon))[y_i]``.

    :param features: (N, D) batch features.
    :param labels: (N,) labels.
    :param bank: Prototype bank (C, M, D).
    :param tau: Temperature.
    :param epsilon: Stability offset.
    :return: Value with gradients for prototypes and features.
    """
    matrix, label_array = _validate_batch(features, labels, bank.class_count, bank.dimension)
    n = matrix.shape[0]
    rows = np.arange(n)

    value = 0.0
    grad_prototypes = np.zeros_like(bank.prototypes)
    grad_features = np.zeros_like(matrix)

    for m in range(bank.heads):
        prototypes = bank.head(m)
        diff = matrix[:, None, :] - prototypes[None, :, :]
        shifted = np.einsum("ncd,ncd->nc", diff, diff) + epsilon
        logits = tau / shifted

        value += float(-np.mean(log_softmax(logits, axis=1)[rows, label_array]))

        # d loss / d logits, then through logits = tau / (d + eps)
        upstream = softmax(logits, axis=1)
        upstream[rows, label_array] -= 1.0
        upstream /= n
        weights = upstream * (-tau / shifted**2)

        # d distance / d u = -2 (f - u), d distance / d f = 2 (f - u)
        grad_prototypes[:, m, :] = -2.0 * np.einsum("nc,ncd->cd", weights, diff)
        grad_features += 2.0 * np.einsum("nc,ncd->nd", weights, diff)

    return LossGradient(value=value, prototypes=grad_prototypes, features=grad_features)


def loss_intra(
    features: ArrayLike, labels: ArrayLike, centers: ArrayLike, frozen_gaussians: Sequence[ClassGaussian]
) -> LossGradient:
    """
    Mahalanobis intra-class loss ``sum_i (f_i - c_{y_i})^T S_{y_i}^{-1} (f_i - c_{y_i})``.

    Passing identity Gaussians gives the squared Euclidean variant.

    :param features: (N, D) batch features.
    :param labels: (N,) labels.
    :param centers: (C, D) frozen class centers.
    :param frozen_gaussians: Per-class Gaussians whose factorizations define ``S``.
    :return: Value with the gradient w.r.t. features, ``2 S^{-1} (f - c)``.
    """
    center_matrix = np.asarray(centers, dtype=np.float64)
    matrix, label_array = _validate_batch(features, labels, center_matrix.shape[0], center_matrix.shape[1])

    value = 0.0
    grad_features = np.zeros_like(matrix)
    for c in np.unique(label_array):
        if c >= len(frozen_gaussians):
            raise MissingGaussiansError(f"No frozen Gaussian for observed label {c}")
        g = frozen_gaussians[c]
        if g.factorization is None:
            raise FactorizationMissingError(f"Frozen Gaussian of class {c} has no factorization")

        mask = label_array == c
        diff = (matrix[mask] - center_matrix[c]).T
        solved = cho_solve((g.factorization, True), diff)
        value += float(np.einsum("dn,dn->", diff, solved))
        grad_features[mask] = 2.0 * solved.T

    return LossGradient(value=value, features=grad_features)


def loss_intra_euclidean(features: ArrayLike, labels: ArrayLike, centers: ArrayLike) -> LossGradient:
    """
    Squared Euclidean intra-class loss ``sum_i ||f_i - c_{y_i}||^2``.

    :param features: (N, D) batch features.
    :param labels: (N,) labels.
    :param centers: (C, D) class centers.
    :return: Value with the gradient w.r.t. features.
    """
    return loss_intra(features, labels, centers, identity_gaussians(centers))


def loss_intra_manhattan(features: ArrayLike, labels: ArrayLike, centers: ArrayLike) -> LossGradient:
    """
    L1 intra-class loss ``sum_i |f_i - c_{y_i}|_1`` with its subgradient ``sign(f - c)``.

    :param features: (N, D) batch features.
    :param labels: (N,) labels.
    :param centers: (C, D) class centers.
    :return: Value with the (sub)gradient w.r.t. features.
    """
    center_matrix = np.asarray(centers, dtype=np.float64)
    matrix, label_array = _validate_batch(features, labels, center_matrix.shape[0], center_matrix.shape[1])
    diff = matrix - center_matrix[label_array]
    return LossGradient(value=float(np.abs(diff).sum()), features=np.sign(diff))


def loss_text_sep(bank: PrototypeBank) -> LossGradient:
    """
    Separation loss ``-sum_{i<j} ||n_i - n_j||^2`` over all M*C normalized prototypes ``n = u / ||u||``.

    Each pair term lies in [-4, 0]. The gradient is taken through the normalization.

    :param bank: Prototype bank.
    :return: Value with the gradient w.r.t. prototypes.
    :raises TooFewPrototypesError: If the bank holds fewer than two prototypes.
    """
    flat = bank.flattened()
    count = flat.shape[0]
    if count < 2:
        raise TooFewPrototypesError(f"Separation loss needs at least 2 prototypes, got {count}")

    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise TooFewPrototypesError("Separation loss is undefined for zero-norm prototypes.")
    unit = flat / norms

    value = -float(pdist(unit, metric="sqeuclidean").sum())

    # d/dn_i of -(K * sum ||n||^2 - ||sum n||^2) is 2 * (S - K n_i); the K n_i part is radial
    total = unit.sum(axis=0)
    tangent = total[None, :] - (unit @ total)[:, None] * unit
    grad = 2.0 * tangent / norms
    return LossGradient(value=value, prototypes=grad.reshape(bank.prototypes.shape))


def total_loss(cls: float, intra: float, text_sep: float, weights: LossWeights) -> LossBreakdown:
    """
    Weighted objective ``cls + alpha * intra + beta * text_sep``.

    :param cls: Classification loss.
    :param intra: Intra-class loss.
    :param text_sep: Separation loss.
    :param weights: Loss weights.
    :return: LossBreakdown with the total.
    :raises NonFiniteLossError: If any component or the total is not finite.
    """
    for name, value in (("cls", cls), ("intra", intra), ("text_sep", text_sep)):
        if not math.isfinite(value):
            raise NonFiniteLossError(f"Loss component {name} is not finite: {value}")

    total = cls + weights.alpha * intra + weights.beta * text_sep
    if not math.isfinite(total):
        raise NonFiniteLossError(f"Total loss is not finite: {total}")
    return LossBreakdown(cls=cls, intra=intra, text_sep=text_sep, total=total)


def adapter_gradient(inputs: ArrayLike, feature_grad: ArrayLike) -> NDArray[np.float64]:
    """
    Chain a gradient w.r.t. adapted features ``f' = W f`` into the adapter weight.

    :param inputs: (N, D) features before the adapter.
    :param feature_grad: (N, D) gradient w.r.t. the adapted features.
    :return: (D, D) gradient w.r.t. ``W``.
    """
    return np.asarray(feature_grad, dtype=np.float64).T @ np.asarray(inputs, dtype=np.float64)

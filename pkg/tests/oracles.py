"""
Brute-force reference implementations used only by the tests.

Nothing here calls into ``covariance_fewshot`` arithmetic: inverses come from ``np.linalg.inv``,
covariances from explicit outer-product sums and softmax from scalar ``math.exp``.
"""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from covariance_fewshot.errors import NonFiniteEvaluationError, SingularCovarianceError


@dataclass(frozen=True)
class FiniteDiffSpec:
    step: float = 1e-5
    tolerance: float = 1e-4

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ValueError(f"Finite-difference step must be positive, got {self.step}")


def fd_gradient(
    fn: Callable[[NDArray[np.float64]], float], point: ArrayLike, spec: FiniteDiffSpec = FiniteDiffSpec()
) -> NDArray[np.float64]:
    """
    Central finite-difference gradient of a scalar function, one coordinate at a time.

    :param fn: Scalar function of an array shaped like ``point``.
    :param point: Evaluation point.
    :param spec: Step size.
    :return: Gradient with the shape of ``point``.
    :raises NonFiniteEvaluationError: If ``fn`` is not finite next to ``point``.
    """
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat_x.size):
        original = flat_x[i]
        flat_x[i] = original + spec.step
        plus = fn(x.copy())
        flat_x[i] = original - spec.step
        minus = fn(x.copy())
        flat_x[i] = original
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise NonFiniteEvaluationError(f"Function is not finite around coordinate {i}")
        flat_grad[i] = (plus - minus) / (2.0 * spec.step)
    return grad


def relative_error(actual: ArrayLike, expected: ArrayLike, floor: float = 1e-8) -> float:
    a = np.asarray(actual, dtype=np.float64)
    b = np.asarray(expected, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def brute_covariance(samples: ArrayLike, mean: ArrayLike) -> NDArray[np.float64]:
    rows = np.asarray(samples, dtype=np.float64)
    center = np.asarray(mean, dtype=np.float64)
    total = np.zeros((rows.shape[1], rows.shape[1]))
    for row in rows:
        diff = row - center
        total += np.outer(diff, diff)
    return total / rows.shape[0]


def explicit_mahalanobis(x: ArrayLike, mean: ArrayLike, cov: ArrayLike) -> float:
    diff = np.asarray(x, dtype=np.float64) - np.asarray(mean, dtype=np.float64)
    return float(diff @ np.linalg.inv(np.asarray(cov, dtype=np.float64)) @ diff)


def scalar_softmax(logits: Sequence[float]) -> list[float]:
    top = max(logits)
    exps = [math.exp(v - top) for v in logits]
    total = sum(exps)
    return [e / total for e in exps]


def likelihood_bayes(
    x: ArrayLike, means: Sequence[ArrayLike], covariances: Sequence[ArrayLike], include_logdet: bool = True
) -> int:
    """
    Argmax of the Gaussian log-likelihood over classes.

    :param x: (D,) query.
    :param means: Class means.
    :param covariances: Class covariances.
    :param include_logdet: Keep the ``log|S|`` term; without it this is the nearest-Mahalanobis rule.
    :return: Class index.
    :raises SingularCovarianceError: If a covariance is not positive definite.
    """
    vector = np.asarray(x, dtype=np.float64)
    dim = vector.shape[0]
    scores = []
    for mean, cov in zip(means, covariances):
        sign, logdet = np.linalg.slogdet(np.asarray(cov, dtype=np.float64))
        if sign <= 0:
            raise SingularCovarianceError("Covariance is not positive definite")
        distance = explicit_mahalanobis(vector, mean, cov)
        scores.append(-0.5 * (distance + (logdet if include_logdet else 0.0) + dim * math.log(2 * math.pi)))
    return int(np.argmax(scores))

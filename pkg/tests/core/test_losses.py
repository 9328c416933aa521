import math

import numpy as np
import pytest
from oracles import FiniteDiffSpec, fd_gradient, relative_error, scalar_softmax
from scipy.stats import ortho_group

from covariance_fewshot.core import (
    LossWeights,
    PrototypeBank,
    ShrinkageParams,
    adapter_gradient,
    build_class_gaussians,
    identity_gaussians,
    loss_cls,
    loss_intra,
    loss_intra_euclidean,
    loss_intra_manhattan,
    loss_text_sep,
    total_loss,
)
from covariance_fewshot.errors import (
    LabelOutOfRangeError,
    NonFiniteEvaluationError,
    NonFiniteLossError,
    TooFewPrototypesError,
)

TOLERANCE = FiniteDiffSpec().tolerance


def _random_instance(seed: int):
    rng = np.random.default_rng(seed)
    classes = int(rng.integers(2, 6))
    heads = int(rng.integers(1, 4))
    dim = int(rng.integers(2, 9))
    count = int(rng.integers(classes, 3 * classes))
    features = rng.normal(size=(count, dim))
    labels = np.concatenate([np.arange(classes), rng.integers(0, classes, size=count - classes)])
    prototypes = rng.normal(size=(classes, heads, dim))
    return features, labels, prototypes


"""
========================================================================================================================
oracles.fd_gradient
========================================================================================================================
"""


class TestFiniteDifferences:
    # ||x||^2 at (1, 2) -> (2, 4)
    def test_squared_norm(self):
        grad = fd_gradient(lambda x: float(x @ x), [1.0, 2.0])

        assert np.allclose(grad, [2.0, 4.0], atol=1e-8)

    # x^T A x with A = diag(2, 1) at (1, 1) -> (4, 2)
    def test_quadratic_form(self):
        a = np.diag([2.0, 1.0])

        grad = fd_gradient(lambda x: float(x @ a @ x), [1.0, 1.0])

        assert np.allclose(grad, [4.0, 2.0], atol=1e-8)

    # Non-finite evaluations are reported
    def test_non_finite(self):
        with pytest.raises(NonFiniteEvaluationError):
            fd_gradient(lambda x: float("nan"), [0.0])


"""
========================================================================================================================
loss_cls
========================================================================================================================
"""


class TestLossCls:
    # One head, one sample: matches the scalar cross-entropy
    def test_scalar_value(self):
        bank = PrototypeBank(prototypes=np.array([[[0.0, 0.0]], [[2.0, 0.0]]]), normalized=False)

        result = loss_cls([[1.0, 1.0]], [0], bank, tau=1.0, epsilon=0.0)

        probabilities = scalar_softmax([1.0 / 2.0, 1.0 / 2.0])
        assert result.value == pytest.approx(-math.log(probabilities[0]))

    # Heads are summed
    def test_sums_over_heads(self, rng):
        features = rng.normal(size=(5, 3))
        labels = np.array([0, 1, 2, 0, 1])
        prototypes = rng.normal(size=(3, 2, 3))
        bank = PrototypeBank(prototypes=prototypes, normalized=False)

        total = loss_cls(features, labels, bank, 1.0, 1e-3).value

        per_head = [
            loss_cls(features, labels, PrototypeBank(prototypes[:, m : m + 1, :], False), 1.0, 1e-3).value
            for m in range(2)
        ]
        assert total == pytest.approx(sum(per_head))

    # Analytic gradients match central finite differences
    def test_gradients_match_finite_differences(self):
        for seed in range(100):
            features, labels, prototypes = _random_instance(seed)

            def value_of_prototypes(p):
                return loss_cls(features, labels, PrototypeBank(p, False), 1.0, 0.1).value

            def value_of_features(f):
                return loss_cls(f, labels, PrototypeBank(prototypes, False), 1.0, 0.1).value

            result = loss_cls(features, labels, PrototypeBank(prototypes, False), 1.0, 0.1)
            assert relative_error(result.prototypes, fd_gradient(value_of_prototypes, prototypes)) < TOLERANCE
            assert relative_error(result.features, fd_gradient(value_of_features, features)) < TOLERANCE

    # Invariant under a common rotation of features and prototypes
    def test_rotation_invariance(self, rng):
        features = rng.normal(size=(6, 4))
        labels = np.array([0, 1, 2, 0, 1, 2])
        prototypes = rng.normal(size=(3, 2, 4))
        rotation = ortho_group.rvs(4, random_state=rng)

        original = loss_cls(features, labels, PrototypeBank(prototypes, False), 1.0, 1e-3).value
        rotated = loss_cls(features @ rotation.T, labels, PrototypeBank(prototypes @ rotation.T, False), 1.0, 1e-3)

        assert rotated.value == pytest.approx(original, rel=1e-10)

    # Labels outside [0, C) are rejected
    def test_label_out_of_range(self):
        bank = PrototypeBank(prototypes=np.zeros((2, 1, 2)) + 1.0, normalized=False)

        with pytest.raises(LabelOutOfRangeError):
            loss_cls([[0.0, 0.0]], [2], bank, 1.0, 1e-3)


"""
========================================================================================================================
loss_intra / loss_intra_euclidean / loss_intra_manhattan
========================================================================================================================
"""


class TestLossIntra:
    # Identity covariance, f - c = (3, 4) -> 25 with gradient (6, 8)
    def test_identity_example(self):
        result = loss_intra([[3.0, 4.0]], [0], [[0.0, 0.0]], identity_gaussians([[0.0, 0.0]]))

        assert result.value == pytest.approx(25.0)
        assert np.allclose(result.features, [[6.0, 8.0]])

    # A sample at its center contributes nothing
    def test_zero_at_center(self):
        result = loss_intra_euclidean([[1.0, 2.0]], [0], [[1.0, 2.0]])

        assert result.value == 0.0
        assert np.array_equal(result.features, [[0.0, 0.0]])

    # Covariance-weighted gradient matches finite differences
    def test_gradient_matches_finite_differences(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            features = rng.normal(size=(9, 4))
            labels = np.repeat(np.arange(3), 3)
            gaussians = build_class_gaussians(features, labels, 3, ShrinkageParams(0.5, 0.2))
            centers = np.stack([g.mean for g in gaussians])
            queries = rng.normal(size=(9, 4))

            result = loss_intra(queries, labels, centers, gaussians)
            numeric = fd_gradient(lambda f: loss_intra(f, labels, centers, gaussians).value, queries)

            assert relative_error(result.features, numeric) < TOLERANCE

    # L1 variant: sum of absolute differences with sign subgradient
    def test_manhattan(self):
        result = loss_intra_manhattan([[3.0, -4.0]], [0], [[0.0, 0.0]])

        assert result.value == pytest.approx(7.0)
        assert np.array_equal(result.features, [[1.0, -1.0]])


"""
========================================================================================================================
loss_text_sep
========================================================================================================================
"""


class TestLossTextSep:
    # Two opposite unit prototypes: -||n1 - n2||^2 = -4
    def test_opposite_pair(self):
        bank = PrototypeBank(prototypes=np.array([[[1.0, 0.0]], [[-2.0, 0.0]]]), normalized=False)

        assert loss_text_sep(bank).value == pytest.approx(-4.0)

    # Value is bounded by -4 per pair and never positive
    def test_bounds(self, rng):
        bank = PrototypeBank(prototypes=rng.normal(size=(4, 2, 5)), normalized=False)
        pairs = 8 * 7 / 2

        value = loss_text_sep(bank).value

        assert -4.0 * pairs <= value <= 0.0

    # Gradient through the normalization matches finite differences
    def test_gradient_matches_finite_differences(self):
        for seed in range(100):
            prototypes = np.random.default_rng(seed).normal(size=(4, 2, 3))

            result = loss_text_sep(PrototypeBank(prototypes, False))
            numeric = fd_gradient(lambda p: loss_text_sep(PrototypeBank(p, False)).value, prototypes)

            assert relative_error(result.prototypes, numeric) < TOLERANCE

    # Fewer than two prototypes is an error
    def test_single_prototype(self):
        with pytest.raises(TooFewPrototypesError):
            loss_text_sep(PrototypeBank(prototypes=np.ones((1, 1, 3)), normalized=False))


"""
========================================================================================================================
total_loss / adapter_gradient
========================================================================================================================
"""


class TestTotalLoss:
    # Weighted sum of the components
    def test_weighted_sum(self):
        breakdown = total_loss(1.0, 2.0, -3.0, LossWeights(alpha=0.5, beta=2.0))

        assert breakdown.total == pytest.approx(1.0 + 1.0 - 6.0)
        assert breakdown.as_dict()["intra"] == 2.0

    # Zero weights reduce to the classification loss
    def test_zero_weights(self):
        assert total_loss(0.7, 100.0, -50.0, LossWeights(alpha=0.0, beta=0.0)).total == 0.7

    # NaN components are rejected
    def test_non_finite(self):
        with pytest.raises(NonFiniteLossError):
            total_loss(float("nan"), 0.0, 0.0, LossWeights())
        with pytest.raises(NonFiniteLossError):
            total_loss(0.0, float("inf"), 0.0, LossWeights())

    # Negative weights are rejected
    def test_negative_weight(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0)

    # Adapter gradient: chain rule through f' = W f matches finite differences
    def test_adapter_gradient(self, rng):
        inputs = rng.normal(size=(5, 3))
        labels = np.array([0, 1, 0, 1, 0])
        bank = PrototypeBank(prototypes=rng.normal(size=(2, 1, 3)), normalized=False)

        def value_of_weight(w):
            return loss_cls(inputs @ w.T, labels, bank, 1.0, 0.1).value

        weight = np.eye(3)
        analytic = adapter_gradient(inputs, loss_cls(inputs @ weight.T, labels, bank, 1.0, 0.1).features)

        assert relative_error(analytic, fd_gradient(value_of_weight, weight)) < TOLERANCE

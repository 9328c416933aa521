import math

import numpy as np
import pytest
from oracles import likelihood_bayes, scalar_softmax

from covariance_fewshot.core import (
    DistanceMode,
    MahalanobisCenter,
    PrototypeBank,
    ShrinkageParams,
    build_unified_gaussians,
    classify,
    classify_batch,
    distance_matrix,
    ensemble_predict,
    ensemble_predict_batch,
    identity_gaussians,
    predict_proba,
    probabilities_from_cosines,
    probabilities_from_distances,
)
from covariance_fewshot.errors import DimensionMismatchError, MissingGaussiansError


def _bank(prototypes) -> PrototypeBank:
    array = np.asarray(prototypes, dtype=np.float64)
    if array.ndim == 2:
        array = array[:, None, :]
    return PrototypeBank(prototypes=array, normalized=False)


"""
========================================================================================================================
probabilities_from_distances / probabilities_from_cosines
========================================================================================================================
"""


class TestProbabilities:
    # Hand-computed two-class case: logits (1, 0.5)
    def test_two_class_example(self):
        probabilities = probabilities_from_distances([1.0, 2.0], tau=1.0, epsilon=0.0)

        assert probabilities[0] == pytest.approx(1.0 / (1.0 + math.exp(-0.5)), abs=1e-12)
        assert probabilities[0] == pytest.approx(0.62246, abs=1e-5)

    # Matches the scalar softmax and sums to one
    def test_matches_scalar_softmax(self, rng):
        distances = rng.uniform(0.1, 5.0, size=6)

        probabilities = probabilities_from_distances(distances, tau=2.0, epsilon=1e-3)

        expected = scalar_softmax([2.0 / (d + 1e-3) for d in distances])
        assert np.allclose(probabilities, expected, atol=1e-12)
        assert probabilities.sum() == pytest.approx(1.0)

    # A zero distance stays finite thanks to epsilon
    def test_zero_distance_is_finite(self):
        probabilities = probabilities_from_distances([0.0, 1.0], tau=1.0, epsilon=1e-6)

        assert np.all(np.isfinite(probabilities))
        assert probabilities[0] > 0.999

    # Cosine logits are cos / tau
    def test_cosine_logits(self):
        probabilities = probabilities_from_cosines([1.0, 0.0], tau=0.5)

        assert np.allclose(probabilities, scalar_softmax([2.0, 0.0]))

    # Non-positive tau and a zero distance with zero epsilon are rejected
    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            probabilities_from_distances([1.0], tau=0.0, epsilon=0.0)
        with pytest.raises(ValueError):
            probabilities_from_distances([0.0, 1.0], tau=1.0, epsilon=0.0)


"""
========================================================================================================================
distance_matrix / predict_proba
========================================================================================================================
"""


class TestDistanceModes:
    # Euclidean mode gives squared distances
    def test_euclidean_distances(self):
        bank = _bank([[0.0, 0.0], [3.0, 4.0]])

        distances = distance_matrix([[0.0, 0.0]], bank, 0, DistanceMode.EUCLIDEAN)

        assert np.allclose(distances, [[0.0, 25.0]])

    # Cosine mode gives similarities, independent of vector length
    def test_cosine_similarities(self):
        bank = _bank([[2.0, 0.0], [0.0, 5.0]])

        similarities = distance_matrix([[1.0, 1.0]], bank, 0, DistanceMode.COSINE)

        assert np.allclose(similarities, [[1 / math.sqrt(2), 1 / math.sqrt(2)]])

    # With identity covariances Mahalanobis and Euclidean probabilities agree
    def test_identity_metric_reduction(self, rng):
        for _ in range(1000):
            prototypes = rng.normal(size=(4, 5))
            bank = _bank(prototypes)
            f = rng.normal(size=5)

            euclidean = predict_proba(f, bank, 0, DistanceMode.EUCLIDEAN)
            mahalanobis = predict_proba(f, bank, 0, DistanceMode.MAHALANOBIS, identity_gaussians(prototypes))

            assert np.max(np.abs(euclidean - mahalanobis)) < 1e-12

    # Mahalanobis mode without Gaussians is rejected
    def test_missing_gaussians(self):
        bank = _bank([[0.0, 0.0], [1.0, 1.0]])

        with pytest.raises(MissingGaussiansError):
            predict_proba([0.0, 0.0], bank, 0, DistanceMode.MAHALANOBIS)
        with pytest.raises(MissingGaussiansError):
            predict_proba([0.0, 0.0], bank, 0, DistanceMode.MAHALANOBIS, identity_gaussians([[0.0, 0.0]]))

    # Feature dimension must match the bank
    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            predict_proba([0.0, 0.0, 0.0], _bank([[0.0, 0.0]]), 0, DistanceMode.EUCLIDEAN)

    # The FEATURE_MEAN center measures from the Gaussian's mean, not the prototype
    def test_feature_mean_center(self):
        bank = _bank([[10.0, 10.0], [-10.0, -10.0]])
        gaussians = identity_gaussians([[0.0, 0.0], [1.0, 0.0]])

        distances = distance_matrix(
            [[0.0, 0.0]], bank, 0, DistanceMode.MAHALANOBIS, gaussians, MahalanobisCenter.FEATURE_MEAN
        )

        assert np.allclose(distances, [[0.0, 1.0]])


"""
========================================================================================================================
classify / ensemble_predict
========================================================================================================================
"""


class TestClassify:
    # Single head: nearest prototype wins, cosine picks the most similar
    def test_single_head_decisions(self):
        bank = _bank([[0.0, 0.0], [4.0, 0.0], [0.0, 9.0]])
        unit_bank = _bank([[1.0, 0.0], [0.0, 1.0]])

        assert classify([3.0, 0.5], bank, DistanceMode.EUCLIDEAN) == 1
        assert classify([0.1, 1.0], unit_bank, DistanceMode.COSINE) == 1

    # Ties go to the lowest class index
    def test_tie_lowest_index(self):
        bank = _bank([[-1.0, 0.0], [1.0, 0.0]])

        assert classify([0.0, 0.0], bank, DistanceMode.EUCLIDEAN) == 0

    # Per-head probabilities are averaged entrywise
    def test_ensemble_average(self, rng):
        prototypes = rng.normal(size=(3, 4, 6))
        bank = PrototypeBank(prototypes=prototypes, normalized=False)
        f = rng.normal(size=6)

        prediction = ensemble_predict(f, bank, DistanceMode.EUCLIDEAN)

        heads = np.stack([predict_proba(f, bank, m, DistanceMode.EUCLIDEAN) for m in range(4)])
        assert np.allclose(prediction.per_head_probabilities, heads)
        assert np.allclose(prediction.probabilities, heads.mean(axis=0))
        assert prediction.probabilities.sum() == pytest.approx(1.0)
        assert prediction.chosen_class == int(np.argmax(heads.mean(axis=0)))

    # With several heads classify agrees with the ensemble decision
    def test_multi_head_agrees_with_ensemble(self, rng):
        bank = PrototypeBank(prototypes=rng.normal(size=(5, 3, 4)), normalized=False)
        features = rng.normal(size=(50, 4))

        decisions = classify_batch(features, bank, DistanceMode.EUCLIDEAN)

        averaged, _ = ensemble_predict_batch(features, bank, DistanceMode.EUCLIDEAN)
        assert np.array_equal(decisions, np.argmax(averaged, axis=1))
        assert classify(features[0], bank, DistanceMode.EUCLIDEAN) == decisions[0]

    # Shared covariance: nearest-Mahalanobis equals the full likelihood rule
    def test_shared_covariance_matches_bayes(self, rng):
        train = rng.normal(size=(40, 4)) @ rng.normal(size=(4, 4))
        labels = np.repeat(np.arange(4), 10)
        gaussians = build_unified_gaussians(train, labels, 4, ShrinkageParams(0.5, 0.1))
        bank = _bank([g.mean for g in gaussians])
        queries = rng.normal(size=(1000, 4)) * 2.0

        decisions = classify_batch(queries, bank, DistanceMode.MAHALANOBIS, gaussians)

        means = [g.mean for g in gaussians]
        covariances = [g.shrunk_cov for g in gaussians]
        expected = [likelihood_bayes(q, means, covariances) for q in queries]
        assert np.array_equal(decisions, expected)

    # Identity covariances: the likelihood rule is the nearest-mean rule
    def test_identity_bayes_is_nearest_mean(self, rng):
        means = rng.normal(size=(3, 2))
        queries = rng.normal(size=(200, 2))

        bayes = [likelihood_bayes(q, means, [np.eye(2)] * 3) for q in queries]

        assert np.array_equal(bayes, classify_batch(queries, _bank(means), DistanceMode.EUCLIDEAN))

    # Per-class covariances: the dropped log-determinant flips decisions near the class boundary
    def test_per_class_covariance_agreement_rate(self, heteroscedastic_gaussians, rng):
        bank = _bank([g.mean for g in heteroscedastic_gaussians])
        queries = rng.normal(loc=(1.5, 0.0), scale=2.0, size=(2000, 2))

        decisions = classify_batch(queries, bank, DistanceMode.MAHALANOBIS, heteroscedastic_gaussians)

        means = [g.mean for g in heteroscedastic_gaussians]
        covariances = [g.shrunk_cov for g in heteroscedastic_gaussians]
        agreement = np.mean(decisions == [likelihood_bayes(q, means, covariances) for q in queries])
        assert 0.5 < agreement < 1.0

    # An all-zero feature gets finite, uniform cosine probabilities
    def test_zero_feature_cosine(self):
        bank = _bank([[1.0, 0.0], [0.0, 1.0]])

        probabilities = predict_proba([0.0, 0.0], bank, 0, DistanceMode.COSINE)

        assert np.all(np.isfinite(probabilities))
        assert np.allclose(probabilities, [0.5, 0.5])
        assert classify([0.0, 0.0], bank, DistanceMode.COSINE) == 0

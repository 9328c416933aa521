import numpy as np
import pytest

from covariance_fewshot.core import DistanceMode, ShrinkageParams, build_unified_gaussians
from covariance_fewshot.errors import InsufficientSamplesError
from covariance_fewshot.experiments import ALL_MODES, CellJob, measure_logdet_agreement, run_cell
from covariance_fewshot.training import TrainConfig

"""
========================================================================================================================
measure_logdet_agreement
========================================================================================================================
"""


class TestLogdetAgreement:
    # A shared covariance makes both rules agree everywhere
    def test_shared_covariance(self, rng):
        features = rng.normal(size=(30, 3))
        labels = np.repeat(np.arange(3), 10)
        gaussians = build_unified_gaussians(features, labels, 3, ShrinkageParams(1.0, 0.5))

        assert measure_logdet_agreement(gaussians, rng.normal(size=(200, 3))) == 1.0

    # Per-class covariances with different log-determinants disagree near the class boundary
    def test_heteroscedastic_disagreement(self, heteroscedastic_gaussians, rng):
        queries = rng.normal(loc=(1.5, 0.0), scale=2.0, size=(2000, 2))

        rate = measure_logdet_agreement(heteroscedastic_gaussians, queries)

        assert 0.5 < rate < 1.0


"""
========================================================================================================================
CellJob / run_cell
========================================================================================================================
"""


class TestRunCell:
    # The key carries the configuration coordinates
    def test_job_key(self):
        job = CellJob(config=TrainConfig.for_shots(4, heads=2, seed=7))

        key = job.key(DistanceMode.COSINE)

        assert (key.shots, key.heads, key.mode, key.gamma1) == (4, 2, DistanceMode.COSINE, 600.0)

    # One result per mode from a single trained model; agreement only on Mahalanobis
    def test_all_modes(self, small_embeddings, fast_factory):
        job = CellJob(config=fast_factory({"seed": 2}))

        results = run_cell(small_embeddings, job)

        assert [r.key.mode for r in results] == list(ALL_MODES)
        assert all(r.seed == 2 and r.error is None for r in results)
        assert all(r.loss_trace == results[0].loss_trace for r in results)
        assert len(results[0].loss_trace) == 7
        assert results[2].logdet_agreement is not None
        assert results[0].logdet_agreement is None
        assert set(results[0].per_class_accuracy) == {"0", "1", "2"}

    # Failures become one error result per mode
    def test_failed(self, fast_factory):
        job = CellJob(config=fast_factory({}), modes=(DistanceMode.EUCLIDEAN,))

        failed = job.failed(ValueError("bad"))

        assert len(failed) == 1
        assert failed[0].error == "ValueError: bad"
        assert failed[0].accuracy is None

    # Same job twice gives identical results
    def test_deterministic(self, small_embeddings, fast_factory):
        job = CellJob(config=fast_factory({"seed": 3}), modes=(DistanceMode.MAHALANOBIS,))

        assert run_cell(small_embeddings, job) == run_cell(small_embeddings, job)

    # Too few samples per class for the requested shots
    def test_insufficient_samples(self, small_embeddings, fast_factory):
        with pytest.raises(InsufficientSamplesError):
            run_cell(small_embeddings, CellJob(config=fast_factory({"shots": 16})))

import logging
from collections.abc import Mapping
from typing import Any

import numpy as np
import pytest

from covariance_fewshot.core import ShrinkageParams, build_class_gaussians
from covariance_fewshot.data import EmbeddingSet, SyntheticSpec, gen_synthetic, make_embedding_set
from covariance_fewshot.training import TrainConfig, load_train_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_embeddings() -> EmbeddingSet:
    # 3 classes, D=4, 12 samples each; fast enough for end-to-end runs
    return gen_synthetic(SyntheticSpec(class_count=3, dimension=4, per_class=12, mean_scale=3.0, seed=7)).embeddings


@pytest.fixture
def separable_embeddings(rng) -> EmbeddingSet:
    # two tight, far-apart clusters in 2-D
    class_0 = rng.normal(loc=(-3.0, 0.0), scale=0.1, size=(20, 2))
    class_1 = rng.normal(loc=(3.0, 0.0), scale=0.1, size=(20, 2))
    return make_embedding_set(np.vstack([class_0, class_1]), [0] * 20 + [1] * 20, ["left", "right"])


@pytest.fixture
def fast_factory():
    """Config factory with a short epoch budget for end-to-end tests."""

    def factory(overrides: Mapping[str, Any]) -> TrainConfig:
        merged = {"shots": 4, "epochs": 7, "heads": 2, **overrides}
        return load_train_config(None, merged)

    return factory


@pytest.fixture
def restore_root_logger():
    root = logging.getLogger()
    handlers = root.handlers[:]
    level = root.level
    yield root
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        # pytest detaches its own capture handlers after each phase
        if handler not in root.handlers and not type(handler).__module__.startswith("_pytest"):
            root.addHandler(handler)
    root.setLevel(level)
    if hasattr(root, "_cam_logging_configured"):
        delattr(root, "_cam_logging_configured")
    logging.captureWarnings(False)


@pytest.fixture
def heteroscedastic_gaussians():
    # class 0 strongly correlated around the origin, class 1 uncorrelated around (3, 0)
    samples = np.array(
        [[-2.0, -2.0], [-1.0, -0.9], [1.0, 1.1], [2.0, 2.0], [2.0, 0.0], [4.0, 0.0], [3.0, 1.0], [3.0, -1.0]]
    )
    labels = np.repeat([0, 1], 4)
    return build_class_gaussians(samples, labels, 2, ShrinkageParams(0.01, 0.0))

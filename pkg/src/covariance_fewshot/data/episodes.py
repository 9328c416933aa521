import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from randomgen import Xoshiro256

from covariance_fewshot.data.embeddings import EmbeddingSet
from covariance_fewshot.errors import InsufficientSamplesError

log = logging.getLogger(__name__)

SUPPORTED_SHOTS = (1, 2, 4, 8, 16)


def class_generator(seed: int, class_index: int) -> np.random.Generator:
    """
    xoshiro256** generator for one class's draw.

    The seed initializes one xoshiro256** state; class ``c`` draws from that state jumped ``c + 1``
    times (2^128 steps per jump), so every class owns a fixed, non-overlapping stream and a class's
    split does not depend on the number or order of the other classes.

    :param seed: Experiment seed.
    :param class_index: Class index, non-negative.
    :return: Seeded generator.
    """
    return np.random.Generator(Xoshiro256(seed).jumped(class_index + 1))


@dataclass(frozen=True, eq=False)
class FewShotTask:
    """
    A K-shot split of an EmbeddingSet.

    Attributes:
        train (EmbeddingSet): Exactly ``shots`` samples per class.
        test (EmbeddingSet): Every remaining sample.
        shots (int): Samples per class in ``train``.
        seed (int): Seed the split was drawn with.
        train_indices (NDArray): Source row indices of ``train``, ascending.
        test_indices (NDArray): Source row indices of ``test``, ascending.
    """

    train: EmbeddingSet
    test: EmbeddingSet
    shots: int
    seed: int
    train_indices: NDArray[np.int64]
    test_indices: NDArray[np.int64]

    @property
    def class_count(self) -> int:
        return self.train.class_count

    @property
    def dimension(self) -> int:
        return self.train.dimension


def sample_few_shot(embedding_set: EmbeddingSet, shots: int, seed: int) -> FewShotTask:
    """
    Draw ``shots`` samples per class uniformly without replacement; the rest become the test split.

    :param embedding_set: Source set.
    :param shots: Samples per class K, one of ``SUPPORTED_SHOTS``.
    :param seed: Non-negative seed.
    :return: FewShotTask whose train and test indices partition the set.
    :raises InsufficientSamplesError: If a class has K or fewer samples.
    """
    if shots not in SUPPORTED_SHOTS:
        raise ValueError(f"Shots must be one of {SUPPORTED_SHOTS}, got {shots}")
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got {seed}")

    chosen = []
    for c, name in enumerate(embedding_set.class_names):
        rows = np.flatnonzero(embedding_set.labels == c)
        if rows.size <= shots:
            raise InsufficientSamplesError(name, int(rows.size), shots)
        chosen.append(class_generator(seed, c).choice(rows, size=shots, replace=False))

    train_indices = np.sort(np.concatenate(chosen)).astype(np.int64)
    test_mask = np.ones(embedding_set.size, dtype=bool)
    test_mask[train_indices] = False
    test_indices = np.flatnonzero(test_mask).astype(np.int64)

    log.debug(f"Sampled few-shot task shots={shots} seed={seed} train={train_indices.size} test={test_indices.size}")
    return FewShotTask(
        train=embedding_set.subset(train_indices),
        test=embedding_set.subset(test_indices),
        shots=shots,
        seed=seed,
        train_indices=train_indices,
        test_indices=test_indices,
    )

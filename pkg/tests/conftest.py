import numpy as np
import pytest

from anchoral import (Dataset, ExactIndex, LabelStore, SyntheticSpec,
                      build_initial_split, generate_synthetic_task)


@pytest.fixture(scope="session")
def small_task() -> Dataset:
    """2k-instance imbalanced task with 2 minority and 4 majority clusters."""
    spec = SyntheticSpec(n_total=2000, d=16, minority_fraction=0.05,
                         n_minority_clusters=2, n_majority_clusters=4,
                         cluster_sigma=0.3, cluster_center_scale=4.0, seed=7)
    return generate_synthetic_task(spec, n_test_majority=500)


@pytest.fixture(scope="session")
def small_index(small_task) -> ExactIndex:
    return ExactIndex(small_task.embeddings)


@pytest.fixture()
def small_state(small_task):
    return build_initial_split(small_task.labels, n_init=40, per_minority=5, seed=3)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def make_multiclass_labels(rng: np.random.Generator, n: int = 400,
                           n_classes: int = 4) -> LabelStore:
    """Labels with class 0 as a heavy majority and the rest small."""
    probs = np.full(n_classes, 0.05)
    probs[0] = 1.0 - 0.05 * (n_classes - 1)
    labels = rng.choice(n_classes, size=n, p=probs)
    labels[:n_classes] = np.arange(n_classes)  # every class present
    return LabelStore.from_labels(labels, majority_class=0)

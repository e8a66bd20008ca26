"""Pool filters: produce the subpool the acquisition strategy runs on.

All filters receive only the dataset partition, the embeddings and the
retrieval index; true labels of pool instances are never visible here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .anchors import AnchorSet, select_anchors
from .validation import check_ids, derived_rng


@dataclass
class Subpool:
    """Filtered candidate ids (always a subset of the current pool).

    ``scores`` carries per-id aggregated similarities for score-based
    filters; ``capacity`` echoes the configured maximum size, if any.
    """

    ids: np.ndarray
    scores: np.ndarray | None = None
    capacity: int | None = None

    def __len__(self) -> int:
        return int(self.ids.size)


def _empty_subpool(capacity=None) -> Subpool:
    return Subpool(np.empty(0, dtype=np.int64), None, capacity)


def anchoral_filter(anchors: AnchorSet, index, state, n_neighbors: int,
                    max_subpool: int) -> Subpool:
    """Anchored filtering: retrieve each anchor's nearest pool neighbours,
    average the similarity scores of instances retrieved by several anchors,
    and keep the top-scoring ids (ties by ascending id), up to
    ``max_subpool``.
    """
    if n_neighbors < 1 or max_subpool < 1:
        raise ValueError("n_neighbors and max_subpool must be >= 1")
    anchor_ids = anchors.all_ids()
    if anchor_ids.size == 0:
        raise ValueError("anchor set is empty")
    if state.n_pool == 0:
        return _empty_subpool(max_subpool)
    hit_lists = index.query_many(anchor_ids, n_neighbors, exclude=state.labeled_ids)
    all_ids = [h.id for hits in hit_lists for h in hits]
    if not all_ids:
        return _empty_subpool(max_subpool)
    all_ids = np.asarray(all_ids, dtype=np.int64)
    all_sims = np.asarray([h.similarity for hits in hit_lists for h in hits])
    uids, inverse = np.unique(all_ids, return_inverse=True)
    sums = np.zeros(uids.size, dtype=np.float64)
    np.add.at(sums, inverse, all_sims)
    means = sums / np.bincount(inverse)
    order = np.lexsort((uids, -means))
    top = order[: min(uids.size, max_subpool)]
    return Subpool(uids[top], means[top], capacity=max_subpool)


class AnchorALFilter(BaseEstimator):
    """Anchored pool filter: per-class anchors are re-drawn every round, their
    pool neighbourhoods are merged by mean similarity, and the best
    ``max_subpool`` candidates form the subpool."""

    name = "anchoral"

    def __init__(self, a: int = 10, n_neighbors: int = 50, max_subpool: int = 1000,
                 anchor_strategy: str = "kmeanspp",
                 anchor_strategy_overrides: dict | None = None):
        self.a = a
        self.n_neighbors = n_neighbors
        self.max_subpool = max_subpool
        self.anchor_strategy = anchor_strategy
        self.anchor_strategy_overrides = anchor_strategy_overrides

    def reset(self) -> None:
        pass

    def build_subpool(self, state, embeddings, index, model=None,
                      newly_labeled=None, round_seed: int = 0) -> Subpool:
        anchors = select_anchors(
            state, embeddings, self.a, strategy=self.anchor_strategy,
            overrides=self.anchor_strategy_overrides, model=model,
            round_seed=round_seed)
        return anchoral_filter(anchors, index, state, self.n_neighbors, self.max_subpool)


class SealsFilter(BaseEstimator):
    """Neighbourhood-expansion filter: the candidate set accumulates the k
    nearest unlabelled neighbours of every labelled instance (seeded from the
    whole initial labelled set on the first call) and only shrinks when
    candidates get labelled. The subpool is the entire candidate set."""

    name = "seals"

    def __init__(self, k: int = 50):
        self.k = k
        self._candidates: np.ndarray | None = None

    def reset(self) -> None:
        self._candidates = None

    @property
    def candidate_ids(self) -> np.ndarray:
        if self._candidates is None:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero(self._candidates).astype(np.int64)

    def build_subpool(self, state, embeddings, index, model=None,
                      newly_labeled=None, round_seed: int = 0) -> Subpool:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self._candidates is None:
            self._candidates = np.zeros(state.n, dtype=bool)
            seeds = state.labeled_ids
        else:
            seeds = check_ids(newly_labeled if newly_labeled is not None else (), state.n)
        if seeds.size and state.n_pool > 0:
            for hits in index.query_many(seeds, self.k, exclude=state.labeled_ids):
                for hit in hits:
                    self._candidates[hit.id] = True
        self._candidates &= state.pool_mask()
        return Subpool(self.candidate_ids, None, None)


class RandomSubsetFilter(BaseEstimator):
    """Uniform random subset of the pool, re-drawn every round."""

    name = "random_subset"

    def __init__(self, m: int = 10000):
        self.m = m

    def reset(self) -> None:
        pass

    def build_subpool(self, state, embeddings, index, model=None,
                      newly_labeled=None, round_seed: int = 0) -> Subpool:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        pool = state.pool_ids
        if pool.size <= self.m:
            return Subpool(pool.astype(np.int64), None, self.m)
        rng = derived_rng(round_seed)
        ids = np.sort(rng.choice(pool, size=self.m, replace=False))
        return Subpool(ids.astype(np.int64), None, self.m)


class NoOpFilter(BaseEstimator):
    """Standard active learning: the subpool is the entire pool."""

    name = "noop"

    def reset(self) -> None:
        pass

    def build_subpool(self, state, embeddings, index, model=None,
                      newly_labeled=None, round_seed: int = 0) -> Subpool:
        return Subpool(state.pool_ids.astype(np.int64), None, None)


_FILTERS = {
    AnchorALFilter.name: AnchorALFilter,
    SealsFilter.name: SealsFilter,
    RandomSubsetFilter.name: RandomSubsetFilter,
    NoOpFilter.name: NoOpFilter,
}


def make_filter(name: str, **params):
    try:
        cls = _FILTERS[name]
    except KeyError:
        raise ValueError(f"unknown filter {name!r}; choose from {sorted(_FILTERS)}") from None
    return cls(**params)

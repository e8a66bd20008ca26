"""Acquisition strategies: score the subpool and pick the batch to label.

Every strategy sees only the subpool handed to it by the pool filter and
returns at most ``b`` distinct subpool ids.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .anchors import kmeanspp_sample
from .validation import check_rng

_LLOYD_MAX_ITER = 100
_LLOYD_TOL = 1e-6


def entropy(p) -> float:
    """Shannon entropy (nats) of a probability vector; 0 log 0 := 0."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("p must be a 1-d probability vector")
    if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("p is not a probability distribution")
    return float(entropy_scores(p[None, :])[0])


def entropy_scores(probs: np.ndarray) -> np.ndarray:
    """Row-wise predictive entropy in nats."""
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=-1)


def _resolve_ids(m: int, ids) -> np.ndarray:
    if ids is None:
        return np.arange(m, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != (m,):
        raise ValueError("ids must align with the scored rows")
    return ids


def entropy_select(probs, b: int, ids=None) -> np.ndarray:
    """Top-b rows by predictive entropy, ties broken by ascending id."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probs must be 2-d")
    if b < 1:
        raise ValueError("b must be >= 1")
    ids = _resolve_ids(probs.shape[0], ids)
    h = entropy_scores(probs)
    order = np.lexsort((ids, -h))
    return ids[order[: min(b, ids.size)]]


def kmeans_diversity_select(representations, b: int, rng, ids=None) -> np.ndarray:
    """Cluster the L2-normalised representations into b groups with Lloyd's
    algorithm (D-squared seeding) and return, per cluster, the point nearest
    its centroid (ties by ascending id). Empty clusters are reseeded at the
    point farthest from its assigned centroid.
    """
    X = np.asarray(representations, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("representations must be a non-empty 2-d array")
    if b < 1:
        raise ValueError("b must be >= 1")
    m = X.shape[0]
    ids = _resolve_ids(m, ids)
    if b >= m:
        return ids.copy()
    rng = check_rng(rng)

    X = X.copy()
    norms = np.linalg.norm(X, axis=1)
    nz = norms > 0
    X[nz] /= norms[nz, None]

    init = kmeanspp_sample(X, b, rng)
    centroids = X[init].copy()
    x_sq = (X ** 2).sum(axis=1)

    def assign_points(cents):
        d2 = x_sq[:, None] - 2.0 * (X @ cents.T) + (cents ** 2).sum(axis=1)[None, :]
        np.maximum(d2, 0.0, out=d2)
        assign = np.argmin(d2, axis=1)
        sizes = np.bincount(assign, minlength=b)
        for j in np.flatnonzero(sizes == 0):
            to_own = d2[np.arange(m), assign]
            movable = np.flatnonzero(sizes[assign] > 1)
            pick = movable[np.argmax(to_own[movable])]
            sizes[assign[pick]] -= 1
            assign[pick] = j
            sizes[j] = 1
        return assign, d2

    for _ in range(_LLOYD_MAX_ITER):
        assign, _ = assign_points(centroids)
        new_centroids = np.zeros_like(centroids)
        np.add.at(new_centroids, assign, X)
        new_centroids /= np.bincount(assign, minlength=b)[:, None]
        shift = np.linalg.norm(new_centroids - centroids, axis=1).max()
        centroids = new_centroids
        if shift < _LLOYD_TOL:
            break

    assign, d2 = assign_points(centroids)
    selected = np.empty(b, dtype=np.int64)
    for j in range(b):
        members = np.flatnonzero(assign == j)
        selected[j] = members[np.argmin(d2[members, j])]
    return ids[selected]


def badge_select(gradients, b: int, rng, ids=None) -> np.ndarray:
    """D-squared sampling over gradient embeddings, in selection order."""
    gradients = np.asarray(gradients, dtype=np.float64)
    if gradients.ndim != 2 or gradients.shape[0] == 0:
        raise ValueError("gradients must be a non-empty 2-d array")
    if b < 1:
        raise ValueError("b must be >= 1")
    ids = _resolve_ids(gradients.shape[0], ids)
    return kmeanspp_sample(gradients, b, check_rng(rng), ids=ids)


def random_select(ids, b: int, rng) -> np.ndarray:
    """Uniform sample without replacement from the subpool."""
    ids = np.asarray(ids, dtype=np.int64)
    if b < 1:
        raise ValueError("b must be >= 1")
    rng = check_rng(rng)
    if b >= ids.size:
        return ids.copy()
    return rng.choice(ids, size=b, replace=False)


class EntropyStrategy(BaseEstimator):
    """Uncertainty sampling: highest predictive entropy first."""

    name = "entropy"

    def select(self, model, embeddings, subpool_ids, b, rng) -> np.ndarray:
        subpool_ids = np.asarray(subpool_ids, dtype=np.int64)
        if subpool_ids.size == 0:
            return subpool_ids
        probs = model.predict_proba(np.asarray(embeddings)[subpool_ids])
        return entropy_select(probs, b, ids=subpool_ids)


class KMeansDiversityStrategy(BaseEstimator):
    """Diversity sampling over the model's input representations."""

    name = "kmeans_diversity"

    def select(self, model, embeddings, subpool_ids, b, rng) -> np.ndarray:
        subpool_ids = np.asarray(subpool_ids, dtype=np.int64)
        if subpool_ids.size == 0:
            return subpool_ids
        reps = np.asarray(embeddings)[subpool_ids]
        return kmeans_diversity_select(reps, b, rng, ids=subpool_ids)


class BadgeStrategy(BaseEstimator):
    """Hybrid sampling over closed-form last-layer gradient embeddings."""

    name = "badge"

    def select(self, model, embeddings, subpool_ids, b, rng) -> np.ndarray:
        subpool_ids = np.asarray(subpool_ids, dtype=np.int64)
        if subpool_ids.size == 0:
            return subpool_ids
        grads = model.gradient_embeddings(np.asarray(embeddings)[subpool_ids])
        return badge_select(grads, b, rng, ids=subpool_ids)


class RandomStrategy(BaseEstimator):
    name = "random"

    def select(self, model, embeddings, subpool_ids, b, rng) -> np.ndarray:
        subpool_ids = np.asarray(subpool_ids, dtype=np.int64)
        if subpool_ids.size == 0:
            return subpool_ids
        return random_select(subpool_ids, b, rng)


_STRATEGIES = {
    cls.name: cls for cls in
    (EntropyStrategy, KMeansDiversityStrategy, BadgeStrategy, RandomStrategy)
}


def make_strategy(name: str):
    try:
        return _STRATEGIES[name]()
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; "
                         f"choose from {sorted(_STRATEGIES)}") from None

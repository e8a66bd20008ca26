"""Per-class anchor selection from the labelled set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .validation import check_rng, derived_rng

KMEANSPP = "kmeanspp"
ENTROPY = "entropy"
RANDOM = "random"
ANCHOR_STRATEGIES = (KMEANSPP, ENTROPY, RANDOM)


@dataclass
class AnchorSet:
    """Anchors per class; each list holds min(per_class, #labelled) distinct
    labelled ids of that class."""

    anchors: dict[int, np.ndarray]
    per_class: int

    def all_ids(self) -> np.ndarray:
        """All anchor ids, classes in ascending order."""
        if not self.anchors:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.anchors[c] for c in sorted(self.anchors)])

    @property
    def size(self) -> int:
        return sum(len(v) for v in self.anchors.values())


def kmeanspp_sample(points, a: int, rng, ids=None) -> np.ndarray:
    """Sample up to ``a`` distinct points by D-squared weighting.

    The first point is uniform; each subsequent one is drawn with probability
    proportional to its squared Euclidean distance to the nearest point
    already chosen. Returns the corresponding entries of ``ids`` (row indices
    by default) in selection order. If every remaining point coincides with a
    chosen one, the remaining picks fall back to uniform draws.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a non-empty 2-d array")
    if a < 1:
        raise ValueError("a must be >= 1")
    m = points.shape[0]
    if ids is None:
        ids = np.arange(m, dtype=np.int64)
    else:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape != (m,):
            raise ValueError("ids must align with points")
    rng = check_rng(rng)

    target = min(a, m)
    chosen = np.empty(target, dtype=np.int64)
    chosen_mask = np.zeros(m, dtype=bool)
    first = int(rng.integers(m))
    chosen[0] = first
    chosen_mask[first] = True
    d2 = ((points - points[first]) ** 2).sum(axis=1)
    for t in range(1, target):
        total = d2.sum()
        if total > 0.0:
            r = rng.random() * total
            j = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            j = min(j, m - 1)
            # float edge cases can land on a zero-weight slot; move to the
            # nearest slot with positive weight
            if d2[j] == 0.0:
                positive = np.flatnonzero(d2 > 0.0)
                j = int(positive[np.searchsorted(positive, j) % positive.size])
        else:
            j = int(rng.choice(np.flatnonzero(~chosen_mask)))
        chosen[t] = j
        chosen_mask[j] = True
        d2 = np.minimum(d2, ((points - points[j]) ** 2).sum(axis=1))
    return ids[chosen]


def _row_entropies(probs: np.ndarray) -> np.ndarray:
    # 0 * log 0 := 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=1)


def select_anchors(state, embeddings, a: int, strategy: str = KMEANSPP,
                   overrides: Mapping[int, str] | None = None,
                   model=None, round_seed: int = 0) -> AnchorSet:
    """Select up to ``a`` anchors per class from the labelled set.

    ``strategy`` applies to every class unless ``overrides`` maps a class id
    to a different one. Strategies: ``kmeanspp`` (diversity via D-squared
    sampling on the class's embeddings), ``entropy`` (top-a labelled
    instances by model predictive entropy, ties by ascending id; requires a
    trained model) and ``random`` (uniform without replacement; the
    no-anchoring ablation). Each class draws from its own RNG stream derived
    from (round_seed, class), so selections do not depend on class order.
    """
    if a < 1:
        raise ValueError("a must be >= 1")
    embeddings = np.asarray(embeddings)
    labeled = state.labeled_ids
    y = state.labeled_labels()
    anchors: dict[int, np.ndarray] = {}
    for c in sorted(set(int(v) for v in y)):
        ids_c = np.sort(labeled[y == c])
        strat = overrides.get(c, strategy) if overrides else strategy
        rng = derived_rng(round_seed, c)
        if strat == KMEANSPP:
            selected = kmeanspp_sample(embeddings[ids_c], a, rng, ids=ids_c)
        elif strat == RANDOM:
            selected = rng.choice(ids_c, size=min(a, ids_c.size), replace=False)
        elif strat == ENTROPY:
            if model is None:
                raise ValueError("entropy anchor strategy requires a trained model")
            h = _row_entropies(model.predict_proba(embeddings[ids_c]))
            order = np.lexsort((ids_c, -h))
            selected = ids_c[order[: min(a, ids_c.size)]]
        else:
            raise ValueError(f"unknown anchor strategy {strat!r}")
        anchors[c] = np.asarray(selected, dtype=np.int64)
    return AnchorSet(anchors=anchors, per_class=a)

"""Cosine-similarity nearest-neighbour retrieval.

Two interchangeable back-ends: :class:`HnswIndex`, an approximate
navigable-small-world graph for large pools, and :class:`ExactIndex`, a
brute-force scan used as the correctness oracle and for small pools. Both
answer id-based queries with an exclusion set (e.g. the labelled ids), return
hits sorted by non-increasing similarity with ties broken by ascending id,
and are immutable once built.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _hnsw
from .validation import check_embeddings, check_ids

AIDX_MAGIC = b"AIDX"
AIDX_VERSION = 1

_MAX_LEVEL = 32
_EXCESS_DOUBLINGS = 4  # over-fetch retries before falling back to an exact scan


class IndexFileError(ValueError):
    """Malformed AIDX persistence file."""


@dataclass(frozen=True)
class IndexParams:
    """Graph construction/search parameters.

    ``max_connections`` is the graph out-degree M (layer 0 keeps up to 2*M
    links, the standard choice); ``seed`` drives the geometric level
    assignment with multiplier 1/ln(M).
    """

    ef_construction: int = 200
    ef_search: int = 200
    max_connections: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.max_connections < 2:
            raise ValueError("max_connections must be >= 2")
        if self.ef_construction < self.max_connections:
            raise ValueError("ef_construction must be >= max_connections")
        if self.ef_search < 1:
            raise ValueError("ef_search must be >= 1")


class NeighborHit(NamedTuple):
    id: int
    similarity: float


def cosine_similarity(u, v) -> float:
    """Cosine similarity of two non-zero vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ValueError(f"vectors must be 1-d and same length, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _normalized_rows(embeddings: np.ndarray) -> np.ndarray:
    """L2-normalise rows to float32, rejecting zero-norm rows by id."""
    emb = check_embeddings(embeddings)
    norms = np.linalg.norm(emb.astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        row = int(np.flatnonzero(norms == 0.0)[0])
        raise ValueError(f"row {row} has zero norm; cosine similarity undefined")
    return (emb.astype(np.float64) / norms[:, None]).astype(np.float32)


def _exact_query(vn64: np.ndarray, query_id: int, k: int,
                 excl_mask: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Full-scan top-k over float64-normalised rows; excludes the query row."""
    sims = vn64 @ vn64[query_id]
    if excl_mask is not None:
        sims = np.where(excl_mask, -np.inf, sims)
    sims[query_id] = -np.inf
    avail = int(np.sum(sims > -np.inf))
    kk = min(k, avail)
    if kk == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    part = np.argpartition(-sims, kk - 1)
    kth_val = sims[part[kk - 1]]
    cand = np.flatnonzero(sims >= kth_val)
    order = np.lexsort((cand, -sims[cand]))
    top = cand[order[:kk]]
    return top.astype(np.int64), sims[top]


def _as_hits(ids: np.ndarray, sims: np.ndarray) -> list[NeighborHit]:
    return [NeighborHit(int(i), float(s)) for i, s in zip(ids, sims)]


def exact_knn(embeddings, query_id: int, k: int, exclude=()) -> list[NeighborHit]:
    """Exact top-k cosine neighbours of a row by full scan.

    Oracle twin of :meth:`HnswIndex.query`: same exclusion semantics, same
    (similarity desc, id asc) ordering. Returns fewer than k hits when the
    candidate set is smaller (not an error).
    """
    vn = _normalized_rows(embeddings).astype(np.float64)
    n = vn.shape[0]
    query_id = int(check_ids([query_id], n, name="query_id")[0])
    if k < 1:
        raise ValueError("k must be >= 1")
    excl_mask = None
    exclude = check_ids(exclude, n, name="exclude")
    if exclude.size:
        excl_mask = np.zeros(n, dtype=bool)
        excl_mask[exclude] = True
    ids, sims = _exact_query(vn, query_id, k, excl_mask)
    return _as_hits(ids, sims)


class ExactIndex:
    """Brute-force cosine index with the same query interface as the graph."""

    def __init__(self, embeddings=None):
        self._vn64: np.ndarray | None = None
        if embeddings is not None:
            self.fit(embeddings)

    def fit(self, embeddings) -> "ExactIndex":
        self._vn64 = _normalized_rows(embeddings).astype(np.float64)
        return self

    @property
    def n(self) -> int:
        self._check_fitted()
        return int(self._vn64.shape[0])

    def _check_fitted(self):
        if self._vn64 is None:
            raise RuntimeError("index is not built; call fit() first")

    def _exclusion_mask(self, exclude) -> np.ndarray | None:
        exclude = check_ids(exclude, self.n, name="exclude")
        if exclude.size == 0:
            return None
        mask = np.zeros(self.n, dtype=bool)
        mask[exclude] = True
        return mask

    def query(self, query_id: int, k: int, exclude=()) -> list[NeighborHit]:
        self._check_fitted()
        if k < 1:
            raise ValueError("k must be >= 1")
        query_id = int(check_ids([query_id], self.n, name="query_id")[0])
        ids, sims = _exact_query(self._vn64, query_id, k, self._exclusion_mask(exclude))
        return _as_hits(ids, sims)

    def query_many(self, query_ids, k: int, exclude=()) -> list[list[NeighborHit]]:
        self._check_fitted()
        if k < 1:
            raise ValueError("k must be >= 1")
        query_ids = check_ids(query_ids, self.n, name="query_ids")
        mask = self._exclusion_mask(exclude)
        return [_as_hits(*_exact_query(self._vn64, int(q), k, mask)) for q in query_ids]


class HnswIndex:
    """Approximate cosine index over a fixed embedding matrix.

    The graph is built once over all rows (single-threaded, deterministic for
    a fixed ``params.seed``) and never updated; concurrent read-only queries
    are safe. Queries exclude ids by over-fetching and post-filtering,
    doubling the fetch size up to four times before falling back to an exact
    scan, so results are always correct.
    """

    def __init__(self, params: IndexParams | None = None):
        self.params = params or IndexParams()
        self._vecs: np.ndarray | None = None
        self._vn64: np.ndarray | None = None
        self._levels = None
        self._neighbors = None
        self._counts = None
        self._adj_start = None
        self._cnt_start = None
        self._entry = 0
        self._max_level = 0

    # -- construction ---------------------------------------------------

    def fit(self, embeddings) -> "HnswIndex":
        self._vecs = _normalized_rows(embeddings)
        n = self._vecs.shape[0]
        self._levels = self._draw_levels(n)
        (self._neighbors, self._counts, self._adj_start, self._cnt_start,
         self._entry, self._max_level) = _hnsw.build_graph(
            self._vecs, self._levels,
            np.int64(self.params.max_connections),
            np.int64(self.params.ef_construction))
        return self

    def _draw_levels(self, n: int) -> np.ndarray:
        ml = 1.0 / np.log(self.params.max_connections)
        rng = np.random.default_rng(self.params.seed)
        u = 1.0 - rng.random(n)  # in (0, 1], avoids log(0)
        levels = np.floor(-np.log(u) * ml).astype(np.int32)
        return np.minimum(levels, _MAX_LEVEL)

    def _check_fitted(self):
        if self._vecs is None:
            raise RuntimeError("index is not built; call fit() first")

    @property
    def n(self) -> int:
        self._check_fitted()
        return int(self._vecs.shape[0])

    @property
    def entry_point(self) -> int:
        self._check_fitted()
        return int(self._entry)

    @property
    def max_level(self) -> int:
        self._check_fitted()
        return int(self._max_level)

    def neighbor_lists(self) -> list[list[np.ndarray]]:
        """Per-node, per-layer adjacency (copies), for tests and persistence."""
        self._check_fitted()
        M = self.params.max_connections
        M0 = 2 * M
        out = []
        for i in range(self.n):
            layers = []
            for layer in range(int(self._levels[i]) + 1):
                base = self._adj_start[i] + (0 if layer == 0 else M0 + (layer - 1) * M)
                cnt = int(self._counts[self._cnt_start[i] + layer])
                layers.append(np.array(self._neighbors[base:base + cnt], dtype=np.int64))
            out.append(layers)
        return out

    # -- queries ----------------------------------------------------------

    def _dense64(self) -> np.ndarray:
        if self._vn64 is None:
            self._vn64 = self._vecs.astype(np.float64)
        return self._vn64

    def _raw_knn(self, query_id: int, ef: int) -> tuple[np.ndarray, np.ndarray]:
        return _hnsw.knn_search(
            self._vecs, self._neighbors, self._counts, self._adj_start,
            self._cnt_start, np.int64(self.params.max_connections),
            np.int64(self._entry), np.int64(self._max_level),
            np.int64(query_id), np.int64(ef))

    def query(self, query_id: int, k: int, exclude=()) -> list[NeighborHit]:
        """Up to k nearest stored rows, never the query row or an excluded id.

        Returns all available hits when fewer than k remain.
        """
        self._check_fitted()
        if k < 1:
            raise ValueError("k must be >= 1")
        n = self.n
        query_id = int(check_ids([query_id], n, name="query_id")[0])
        exclude = check_ids(exclude, n, name="exclude")
        excl_mask = np.zeros(n, dtype=bool)
        excl_mask[exclude] = True
        excl_mask[query_id] = True
        avail = n - int(excl_mask.sum())
        if avail <= 0:
            return []
        if k >= avail:
            ids, sims = _exact_query(self._dense64(), query_id, k, excl_mask)
            return _as_hits(ids, sims)
        overlap_estimate = int(np.ceil(k * exclude.size / n))
        ef = max(self.params.ef_search, k + overlap_estimate)
        for _ in range(1 + _EXCESS_DOUBLINGS):
            ids, sims = self._raw_knn(query_id, min(ef, n))
            keep = ~excl_mask[ids]
            if int(keep.sum()) >= k:
                return _as_hits(ids[keep][:k], sims[keep][:k])
            if ef >= n:
                break
            ef *= 2
        ids, sims = _exact_query(self._dense64(), query_id, k, excl_mask)
        return _as_hits(ids, sims)

    def query_many(self, query_ids, k: int, exclude=()) -> list[list[NeighborHit]]:
        self._check_fitted()
        query_ids = check_ids(query_ids, self.n, name="query_ids")
        return [self.query(int(q), k, exclude) for q in query_ids]

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        """Persist the graph (not the vectors) in the AIDX binary format."""
        self._check_fitted()
        lists = self.neighbor_lists()
        with open(path, "wb") as fh:
            fh.write(AIDX_MAGIC)
            fh.write(struct.pack("<I", AIDX_VERSION))
            fh.write(struct.pack("<IIIQ", self.params.ef_construction,
                                 self.params.ef_search, self.params.max_connections,
                                 self.params.seed))
            fh.write(struct.pack("<QIQI", self.n, int(self._vecs.shape[1]),
                                 self._entry, self._max_level))
            fh.write(self._levels.astype("<i4").tobytes())
            for layers in lists:
                for ids in layers:
                    fh.write(struct.pack("<I", len(ids)))
                    fh.write(ids.astype("<i4").tobytes())

    @classmethod
    def load(cls, path, embeddings) -> "HnswIndex":
        """Rebuild an index from an AIDX file plus its embedding matrix.

        The loaded index answers queries identically to the one saved.
        """
        raw = Path(path).read_bytes()
        off = 0

        def take(fmt):
            nonlocal off
            size = struct.calcsize(fmt)
            if off + size > len(raw):
                raise IndexFileError(f"{path}: truncated file")
            vals = struct.unpack_from(fmt, raw, off)
            off += size
            return vals

        magic, = take("<4s")
        if magic != AIDX_MAGIC:
            raise IndexFileError(f"{path}: bad magic {magic!r}")
        version, = take("<I")
        if version != AIDX_VERSION:
            raise IndexFileError(f"{path}: unsupported version {version}")
        efc, efs, M, seed = take("<IIIQ")
        n, d, entry, max_level = take("<QIQI")
        vecs = _normalized_rows(embeddings)
        if vecs.shape != (n, d):
            raise IndexFileError(
                f"{path}: index was built over a {n}x{d} matrix, "
                f"got {vecs.shape[0]}x{vecs.shape[1]}"
            )
        if off + 4 * n > len(raw):
            raise IndexFileError(f"{path}: truncated level table")
        levels = np.frombuffer(raw, dtype="<i4", count=n, offset=off).astype(np.int32)
        off += 4 * n

        index = cls(IndexParams(efc, efs, M, seed))
        index._vecs = vecs
        index._levels = levels
        M0 = 2 * M
        slots_per_node = M0 + levels.astype(np.int64) * M
        index._adj_start = np.concatenate([[0], np.cumsum(slots_per_node)[:-1]]).astype(np.int64)
        index._cnt_start = np.concatenate([[0], np.cumsum(levels + 1)[:-1]]).astype(np.int64)
        index._neighbors = np.zeros(int(slots_per_node.sum()), dtype=np.int32)
        index._counts = np.zeros(int((levels + 1).sum()), dtype=np.int32)
        index._entry = int(entry)
        index._max_level = int(max_level)
        for i in range(n):
            for layer in range(int(levels[i]) + 1):
                cnt, = take("<I")
                if cnt > (M0 if layer == 0 else M):
                    raise IndexFileError(f"{path}: adjacency count {cnt} exceeds capacity")
                if off + 4 * cnt > len(raw):
                    raise IndexFileError(f"{path}: truncated adjacency list")
                ids = np.frombuffer(raw, dtype="<i4", count=cnt, offset=off)
                off += 4 * cnt
                base = index._adj_start[i] + (0 if layer == 0 else M0 + (layer - 1) * M)
                index._neighbors[base:base + cnt] = ids
                index._counts[index._cnt_start[i] + layer] = cnt
        if off != len(raw):
            raise IndexFileError(f"{path}: {len(raw) - off} trailing bytes")
        return index


def build_index(embeddings, params: IndexParams | None = None) -> HnswIndex:
    """Build an :class:`HnswIndex` over all rows of ``embeddings``."""
    return HnswIndex(params).fit(embeddings)

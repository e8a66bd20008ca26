"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_embeddings(values, *, name: str = "embeddings") -> np.ndarray:
    """Validate and return an (n, d) float32 embedding matrix.

    Requires a 2-d array with n >= 1, d >= 1 and only finite entries.
    """
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {arr.shape}")
    n, d = arr.shape
    if n < 1 or d < 1:
        raise ValueError(f"{name} must have n >= 1 and d >= 1, got shape {arr.shape}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_label_array(y, *, n: int | None = None, n_classes: int | None = None) -> np.ndarray:
    """Validate and return a 1-d int64 label array with entries in [0, n_classes)."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"labels must be 1-d, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ValueError("labels must be integers")
    arr = arr.astype(np.int64, copy=False)
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"expected {n} labels, got {arr.shape[0]}")
    if arr.size:
        if arr.min() < 0:
            raise ValueError("labels must be non-negative")
        if n_classes is not None and arr.max() >= n_classes:
            raise ValueError(f"label {arr.max()} out of range for {n_classes} classes")
    return arr


def check_ids(ids, n: int, *, name: str = "ids") -> np.ndarray:
    """Validate and return a 1-d int64 array of instance ids in [0, n)."""
    arr = np.asarray(ids)
    if arr.size == 0:
        return np.empty(0, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name} must be integers")
    arr = arr.astype(np.int64, copy=False)
    if arr.min() < 0 or arr.max() >= n:
        raise ValueError(f"{name} out of range [0, {n})")
    return arr


def check_rng(rng) -> np.random.Generator:
    """Coerce an int seed or Generator into a numpy Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def derived_rng(*parts: int) -> np.random.Generator:
    """Deterministic RNG stream derived from a tuple of integers.

    Used to give independent, order-insensitive streams to sub-tasks
    (e.g. one stream per (round, class) pair).
    """
    return np.random.default_rng(np.random.SeedSequence(list(parts)))


def derive_seed(*parts: int) -> int:
    """Deterministic integer seed derived from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])

"""Dataset handling: embedding/label files, synthetic tasks, pool bookkeeping."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .validation import check_embeddings, check_ids, check_label_array, check_rng

AEMB_MAGIC = b"AEMB"
AEMB_VERSION = 1
_AEMB_HEADER = struct.Struct("<4sIQI")  # magic, version, n, d

# Minority cluster centres are placed this many sigmas away from the centre of
# a randomly chosen majority cluster, so rare-class blobs sit on the flank of a
# common one and are reachable by similarity search, while staying separable
# (margin of _MINORITY_OFFSET_SIGMAS / 2 standard deviations).
_MINORITY_OFFSET_SIGMAS = 6.0


class EmbeddingFileError(ValueError):
    """Base error for malformed embedding files."""


class BadMagicError(EmbeddingFileError):
    pass


class BadVersionError(EmbeddingFileError):
    pass


class TruncatedFileError(EmbeddingFileError):
    pass


class TrailingBytesError(EmbeddingFileError):
    pass


class NonFiniteValueError(EmbeddingFileError):
    pass


class LabelFileError(ValueError):
    """Malformed labels CSV."""


class InfeasibleSpecError(ValueError):
    """A requested dataset or split cannot be materialised."""


def write_embeddings(values: np.ndarray, path) -> None:
    """Write an (n, d) float32 matrix in the AEMB binary format.

    Layout: magic ``AEMB``, u32 LE version, u64 LE n, u32 LE d, then n*d
    float32 LE values in row-major order. No padding, no trailing bytes.
    """
    arr = check_embeddings(values)
    n, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(_AEMB_HEADER.pack(AEMB_MAGIC, AEMB_VERSION, n, d))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_embeddings(path) -> np.ndarray:
    """Read an AEMB file, returning the (n, d) float32 matrix.

    Raises a distinct :class:`EmbeddingFileError` subclass for each failure
    mode: bad magic, unsupported version, truncated payload, trailing bytes,
    or non-finite values.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the magic bytes")
    if raw[:4] != AEMB_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {AEMB_MAGIC!r}")
    if len(raw) < _AEMB_HEADER.size:
        raise TruncatedFileError(f"{path}: truncated header ({len(raw)} bytes)")
    _, version, n, d = _AEMB_HEADER.unpack_from(raw)
    if version != AEMB_VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    if n < 1 or d < 1:
        raise EmbeddingFileError(f"{path}: header declares n={n}, d={d}; both must be >= 1")
    expected = _AEMB_HEADER.size + 4 * n * d
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: payload truncated, expected {expected} bytes, got {len(raw)}"
        )
    if len(raw) > expected:
        raise TrailingBytesError(
            f"{path}: {len(raw) - expected} trailing bytes after the declared payload"
        )
    values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_AEMB_HEADER.size)
    values = values.reshape(n, d).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(f"{path}: payload contains NaN or Inf values")
    return values


@dataclass(frozen=True)
class LabelStore:
    """Per-instance class ids plus the majority/minority split.

    ``minority_classes`` and ``majority_class`` partition {0, ..., n_classes-1}.
    """

    labels: np.ndarray
    n_classes: int
    majority_class: int
    minority_classes: tuple[int, ...]

    def __post_init__(self):
        labels = check_label_array(self.labels, n_classes=self.n_classes)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "minority_classes", tuple(sorted(self.minority_classes)))
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.majority_class in self.minority_classes:
            raise ValueError("majority class listed among minority classes")
        full = set(self.minority_classes) | {self.majority_class}
        if full != set(range(self.n_classes)):
            raise ValueError("majority + minority classes must cover all class ids")

    @classmethod
    def from_labels(cls, labels, majority_class: int | None = None) -> "LabelStore":
        """Build a store from raw labels; the most frequent class is the
        majority unless given explicitly (ties broken by lowest class id)."""
        labels = check_label_array(labels)
        if labels.size == 0:
            raise ValueError("empty label array")
        n_classes = int(labels.max()) + 1
        counts = np.bincount(labels, minlength=n_classes)
        if np.any(counts == 0):
            missing = int(np.flatnonzero(counts == 0)[0])
            raise ValueError(f"class {missing} has no instances")
        if majority_class is None:
            majority_class = int(np.argmax(counts))
        minority = tuple(c for c in range(n_classes) if c != majority_class)
        return cls(labels, n_classes, majority_class, minority)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def is_minority(self, ids) -> np.ndarray:
        ids = check_ids(ids, self.n)
        return self.labels[ids] != self.majority_class


def write_labels(labels: np.ndarray, path) -> None:
    """Write a headered ``id,label`` CSV covering ids 0..n-1 in order."""
    labels = check_label_array(labels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"])
        for i, lab in enumerate(labels):
            writer.writerow([i, int(lab)])


def load_labels(path, n_expected: int | None = None,
                majority_class: int | None = None) -> LabelStore:
    """Read a labels CSV; ids must be exactly 0..n-1, each once."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LabelFileError(f"{path}: empty file") from None
        if [h.strip() for h in header] != ["id", "label"]:
            raise LabelFileError(f"{path}: expected header 'id,label', got {header!r}")
        ids, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise LabelFileError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                ids.append(int(row[0]))
                labels.append(int(row[1]))
            except ValueError:
                raise LabelFileError(f"{path}:{lineno}: non-integer field in {row!r}") from None
    n = len(ids)
    if n == 0:
        raise LabelFileError(f"{path}: no label rows")
    if n_expected is not None and n != n_expected:
        raise LabelFileError(f"{path}: expected {n_expected} rows, got {n}")
    id_arr = np.asarray(ids, dtype=np.int64)
    if np.any(np.sort(id_arr) != np.arange(n)):
        raise LabelFileError(f"{path}: ids must be 0..{n - 1}, each exactly once")
    out = np.empty(n, dtype=np.int64)
    out[id_arr] = np.asarray(labels, dtype=np.int64)
    if out.min() < 0:
        raise LabelFileError(f"{path}: negative label")
    return LabelStore.from_labels(out, majority_class=majority_class)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic imbalanced mixture-of-Gaussians task."""

    n_total: int
    d: int
    minority_fraction: float
    n_minority_clusters: int = 1
    n_majority_clusters: int = 1
    cluster_sigma: float = 1.0
    cluster_center_scale: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_total < 1 or self.d < 1:
            raise ValueError("n_total and d must be >= 1")
        if not 0.0 < self.minority_fraction < 1.0:
            raise ValueError("minority_fraction must be in (0, 1)")
        if self.n_minority_clusters < 1 or self.n_majority_clusters < 1:
            raise ValueError("cluster counts must be >= 1")
        if self.cluster_sigma <= 0 or self.cluster_center_scale <= 0:
            raise ValueError("cluster_sigma and cluster_center_scale must be > 0")

    @property
    def n_minority(self) -> int:
        # round half away from zero, stable across platforms
        return int(np.floor(self.n_total * self.minority_fraction + 0.5))

    @property
    def n_majority(self) -> int:
        return self.n_total - self.n_minority


def _spec_streams(spec: SyntheticSpec) -> dict[str, np.random.Generator]:
    root = np.random.SeedSequence(spec.seed)
    names = ("centers", "train", "train_shuffle", "test", "test_shuffle")
    return {name: np.random.default_rng(child) for name, child in zip(names, root.spawn(len(names)))}


def _draw_centers(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Return (minority_centers, majority_centers).

    Majority centres are spread isotropically; each minority centre is an
    offset satellite of a (round-robin) majority centre.
    """
    maj = rng.normal(0.0, spec.cluster_center_scale, size=(spec.n_majority_clusters, spec.d))
    offsets = rng.normal(0.0, 1.0, size=(spec.n_minority_clusters, spec.d))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    hosts = maj[np.arange(spec.n_minority_clusters) % spec.n_majority_clusters]
    mino = hosts + offsets * (_MINORITY_OFFSET_SIGMAS * spec.cluster_sigma)
    return mino, maj


def _even_split(total: int, parts: int) -> np.ndarray:
    base, rem = divmod(total, parts)
    out = np.full(parts, base, dtype=np.int64)
    out[:rem] += 1
    return out


def _sample_blobs(centers: np.ndarray, counts: np.ndarray, sigma: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    points = []
    cluster_ids = []
    for j, (center, count) in enumerate(zip(centers, counts)):
        points.append(center + sigma * rng.standard_normal((int(count), centers.shape[1])))
        cluster_ids.append(np.full(int(count), j, dtype=np.int64))
    return np.concatenate(points, axis=0), np.concatenate(cluster_ids)


def _generate_split(spec: SyntheticSpec, centers, n_minority: int, n_majority: int,
                    sample_rng, shuffle_rng) -> tuple[np.ndarray, LabelStore, np.ndarray]:
    mino_centers, maj_centers = centers
    mino_counts = _even_split(n_minority, spec.n_minority_clusters)
    maj_counts = _even_split(n_majority, spec.n_majority_clusters)
    mino_pts, mino_cl = _sample_blobs(mino_centers, mino_counts, spec.cluster_sigma, sample_rng)
    maj_pts, maj_cl = _sample_blobs(maj_centers, maj_counts, spec.cluster_sigma, sample_rng)
    emb = np.concatenate([mino_pts, maj_pts], axis=0)
    labels = np.concatenate([
        np.ones(n_minority, dtype=np.int64),
        np.zeros(n_majority, dtype=np.int64),
    ])
    # global cluster ids: minority clusters first, then majority clusters
    cluster_ids = np.concatenate([mino_cl, maj_cl + spec.n_minority_clusters])
    perm = shuffle_rng.permutation(emb.shape[0])
    emb = emb[perm].astype(np.float32)
    labels = labels[perm]
    cluster_ids = cluster_ids[perm]
    store = LabelStore(labels, n_classes=2, majority_class=0, minority_classes=(1,))
    return emb, store, cluster_ids


def generate_synthetic(spec: SyntheticSpec) -> tuple[np.ndarray, LabelStore, np.ndarray]:
    """Generate an imbalanced mixture-of-Gaussians dataset.

    Deterministic in ``spec`` (including the seed). Returns the embedding
    matrix, a :class:`LabelStore` (majority class 0, minority class 1) and the
    per-instance ground-truth cluster id (minority clusters are numbered
    0..n_minority_clusters-1, majority clusters follow). Cluster ids are
    evaluation metadata and must never be fed to selection code.
    """
    if spec.n_minority < spec.n_minority_clusters:
        raise InfeasibleSpecError(
            f"minority_fraction*n_total = {spec.n_minority} cannot fill "
            f"{spec.n_minority_clusters} minority clusters"
        )
    if spec.n_majority < spec.n_majority_clusters:
        raise InfeasibleSpecError(
            f"majority count {spec.n_majority} cannot fill "
            f"{spec.n_majority_clusters} majority clusters"
        )
    streams = _spec_streams(spec)
    centers = _draw_centers(spec, streams["centers"])
    return _generate_split(spec, centers, spec.n_minority, spec.n_majority,
                           streams["train"], streams["train_shuffle"])


@dataclass
class Dataset:
    """A train pool plus a held-out test split (and optional cluster metadata)."""

    embeddings: np.ndarray
    labels: LabelStore
    test_embeddings: np.ndarray
    test_labels: LabelStore
    cluster_ids: np.ndarray | None = None

    def __post_init__(self):
        self.embeddings = check_embeddings(self.embeddings)
        self.test_embeddings = check_embeddings(self.test_embeddings, name="test embeddings")
        if self.labels.n != self.embeddings.shape[0]:
            raise ValueError("train labels do not match embedding count")
        if self.test_labels.n != self.test_embeddings.shape[0]:
            raise ValueError("test labels do not match test embedding count")
        if self.test_embeddings.shape[1] != self.embeddings.shape[1]:
            raise ValueError("train and test dimensionality differ")
        if self.cluster_ids is not None:
            self.cluster_ids = check_label_array(self.cluster_ids, n=self.labels.n)

    @property
    def n(self) -> int:
        return int(self.embeddings.shape[0])

    @property
    def d(self) -> int:
        return int(self.embeddings.shape[1])


def generate_synthetic_task(spec: SyntheticSpec, n_test_majority: int = 5000) -> Dataset:
    """Generate a train pool and a disjoint test split from the same mixture.

    The test split mirrors the capped-majority composition used for
    imbalanced benchmark tasks: ``n_test_majority`` majority draws plus as
    many minority draws as the training pool contains, from the same blobs.
    """
    if spec.n_minority < spec.n_minority_clusters:
        raise InfeasibleSpecError(
            f"minority_fraction*n_total = {spec.n_minority} cannot fill "
            f"{spec.n_minority_clusters} minority clusters"
        )
    if spec.n_majority < spec.n_majority_clusters:
        raise InfeasibleSpecError(
            f"majority count {spec.n_majority} cannot fill "
            f"{spec.n_majority_clusters} majority clusters"
        )
    if n_test_majority < spec.n_majority_clusters:
        raise InfeasibleSpecError("n_test_majority smaller than the majority cluster count")
    streams = _spec_streams(spec)
    centers = _draw_centers(spec, streams["centers"])
    emb, labels, cluster_ids = _generate_split(
        spec, centers, spec.n_minority, spec.n_majority,
        streams["train"], streams["train_shuffle"])
    test_emb, test_labels, _ = _generate_split(
        spec, centers, spec.n_minority, n_test_majority,
        streams["test"], streams["test_shuffle"])
    return Dataset(emb, labels, test_emb, test_labels, cluster_ids=cluster_ids)


class DatasetState:
    """Partition of instance ids into an unlabelled pool and a labelled set.

    Mutated only through :meth:`reveal`; the revealed label map is defined
    exactly on the labelled ids.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("need at least one instance")
        self._n = n
        self._in_pool = np.ones(n, dtype=bool)
        self._labeled: list[int] = []
        self._revealed: dict[int, int] = {}

    @property
    def n(self) -> int:
        return self._n

    @property
    def n_pool(self) -> int:
        return self._n - len(self._labeled)

    @property
    def n_labeled(self) -> int:
        return len(self._labeled)

    @property
    def pool_ids(self) -> np.ndarray:
        """Unlabelled ids in ascending order."""
        return np.flatnonzero(self._in_pool)

    @property
    def labeled_ids(self) -> np.ndarray:
        """Labelled ids in reveal order."""
        return np.asarray(self._labeled, dtype=np.int64)

    @property
    def revealed_labels(self) -> dict[int, int]:
        return dict(self._revealed)

    def pool_mask(self) -> np.ndarray:
        """Boolean pool-membership mask (copy; safe to modify)."""
        return self._in_pool.copy()

    def in_pool(self, ids) -> np.ndarray:
        return self._in_pool[check_ids(ids, self._n)]

    def labels_of(self, ids) -> np.ndarray:
        ids = check_ids(ids, self._n)
        try:
            return np.asarray([self._revealed[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"id {exc.args[0]} is not labelled") from None

    def labeled_labels(self) -> np.ndarray:
        """Revealed labels aligned with :attr:`labeled_ids`."""
        return np.asarray([self._revealed[i] for i in self._labeled], dtype=np.int64)

    def labeled_per_class(self, n_classes: int) -> np.ndarray:
        return np.bincount(self.labeled_labels(), minlength=n_classes)

    def reveal(self, ids, labels: LabelStore) -> "DatasetState":
        """Move ``ids`` from the pool to the labelled set, recording their
        true labels (perfect oracle). Ids must currently be in the pool."""
        ids = check_ids(ids, self._n)
        if ids.size == 0:
            return self
        if len(np.unique(ids)) != ids.size:
            raise ValueError("reveal ids contain duplicates")
        if not np.all(self._in_pool[ids]):
            already = ids[~self._in_pool[ids]][0]
            raise ValueError(f"id {int(already)} is already labelled")
        if labels.n != self._n:
            raise ValueError("label store does not match this state")
        self._in_pool[ids] = False
        for i in ids:
            i = int(i)
            self._labeled.append(i)
            self._revealed[i] = int(labels.labels[i])
        return self


TRAIN_EMB_FILE = "train.aemb"
TRAIN_LABELS_FILE = "train_labels.csv"
TEST_EMB_FILE = "test.aemb"
TEST_LABELS_FILE = "test_labels.csv"
METADATA_FILE = "metadata.json"
DATASET_FILES = (TRAIN_EMB_FILE, TRAIN_LABELS_FILE, TEST_EMB_FILE, TEST_LABELS_FILE)


def save_dataset_dir(dataset: Dataset, out_dir, spec: SyntheticSpec | None = None) -> None:
    """Write a dataset directory: train/test AEMB + labels CSV, plus a
    metadata JSON with the ground-truth cluster ids when available."""
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings(dataset.embeddings, out / TRAIN_EMB_FILE)
    write_labels(dataset.labels.labels, out / TRAIN_LABELS_FILE)
    write_embeddings(dataset.test_embeddings, out / TEST_EMB_FILE)
    write_labels(dataset.test_labels.labels, out / TEST_LABELS_FILE)
    if dataset.cluster_ids is not None:
        from dataclasses import asdict

        meta = {
            "cluster_ids": [int(c) for c in dataset.cluster_ids],
            "spec": asdict(spec) if spec is not None else {},
        }
        (out / METADATA_FILE).write_text(json.dumps(meta) + "\n")


def load_dataset_dir(path) -> Dataset:
    """Load a dataset directory written by :func:`save_dataset_dir`."""
    import json

    root = Path(path)
    emb = load_embeddings(root / TRAIN_EMB_FILE)
    labels = load_labels(root / TRAIN_LABELS_FILE, n_expected=emb.shape[0])
    test_emb = load_embeddings(root / TEST_EMB_FILE)
    test_labels = load_labels(root / TEST_LABELS_FILE, n_expected=test_emb.shape[0])
    cluster_ids = None
    meta_path = root / METADATA_FILE
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        cluster_ids = np.asarray(meta["cluster_ids"], dtype=np.int64)
    return Dataset(emb, labels, test_emb, test_labels, cluster_ids=cluster_ids)


def dataset_content_hash(path) -> str:
    """SHA-256 over the dataset files, in a fixed order."""
    import hashlib

    root = Path(path)
    digest = hashlib.sha256()
    for name in DATASET_FILES:
        digest.update(name.encode())
        digest.update((root / name).read_bytes())
    return digest.hexdigest()


def build_initial_split(labels: LabelStore, n_init: int, per_minority: int,
                        seed, minority_candidates=None) -> DatasetState:
    """Build the initial labelled set: ``per_minority`` instances of each
    minority class plus majority instances up to ``n_init``, sampled
    uniformly without replacement from a dedicated RNG stream.

    ``minority_candidates`` optionally restricts the ids eligible as initial
    minority instances (e.g. to a single ground-truth cluster).
    """
    if n_init < 1 or per_minority < 0:
        raise ValueError("n_init must be >= 1 and per_minority >= 0")
    rng = check_rng(seed)
    n_majority_needed = n_init - per_minority * len(labels.minority_classes)
    if n_majority_needed < 0:
        raise InfeasibleSpecError(
            f"n_init={n_init} cannot hold {per_minority} instances of each of "
            f"{len(labels.minority_classes)} minority classes"
        )
    cand_mask = None
    if minority_candidates is not None:
        cand_mask = np.zeros(labels.n, dtype=bool)
        cand_mask[check_ids(minority_candidates, labels.n)] = True

    state = DatasetState(labels.n)
    chosen: list[np.ndarray] = []
    for c in labels.minority_classes:
        eligible = np.flatnonzero(labels.labels == c)
        if cand_mask is not None:
            eligible = eligible[cand_mask[eligible]]
        if eligible.size < per_minority:
            raise InfeasibleSpecError(
                f"minority class {c} has {eligible.size} eligible instances, "
                f"needs {per_minority}"
            )
        chosen.append(rng.choice(eligible, size=per_minority, replace=False))
    majority_eligible = np.flatnonzero(labels.labels == labels.majority_class)
    if majority_eligible.size < n_majority_needed:
        raise InfeasibleSpecError(
            f"majority class {labels.majority_class} has {majority_eligible.size} "
            f"instances, needs {n_majority_needed}"
        )
    chosen.append(rng.choice(majority_eligible, size=n_majority_needed, replace=False))
    state.reveal(np.concatenate(chosen), labels)
    return state

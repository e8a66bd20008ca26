"""Experiment loop: train, filter, select, reveal, record.

The loop owns the only reference to ground-truth labels. Filters, strategies
and the model are handed the dataset partition and the embeddings; true
labels of unlabelled instances reach the metrics recorder alone.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, DatasetState, build_initial_split
from .filters import make_filter
from .model import SoftmaxClassifier, per_class_f1
from .strategies import make_strategy
from .validation import derive_seed, derived_rng

logger = logging.getLogger(__name__)

ROUNDS_CSV_COLUMNS = (
    "round", "labeled_total", "labeled_per_class", "minority_f1", "majority_f1",
    "selection_time_s", "subpool_size", "subpool_minority_frac", "new_minority",
    "discovered_clusters",
)


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    labeled_total: int
    labeled_per_class: tuple[int, ...]
    per_class_f1: tuple[float, ...]
    minority_f1: float
    majority_f1: float
    selection_time_s: float
    subpool_size: int
    subpool_minority_frac: float
    new_minority: int
    discovered_clusters: tuple[int, ...]
    new_labeled: int
    short_round: bool = False


@dataclass
class ExperimentResult:
    rounds: list[RoundRecord]
    auc_minority: float | None
    auc_majority: float | None
    total_selection_time: float
    completed_budget: int
    n_init: int
    config: dict | None = None
    dataset_hash: str | None = None

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)


def auc_trapezoid(xs, ys) -> float:
    """Trapezoidal area under (xs, ys); xs must be strictly increasing."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 1 or xs.shape != ys.shape:
        raise ValueError("xs and ys must be 1-d and the same length")
    if xs.size < 2:
        raise ValueError("need at least two points")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    return float(np.sum(np.diff(xs) * (ys[:-1] + ys[1:]) / 2.0))


@dataclass(frozen=True)
class Summary:
    median: float
    q1: float
    q3: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def median_iqr(values) -> Summary:
    """Median and linearly interpolated quartiles of a numeric sequence."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise ValueError("need at least one value")
    q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
    return Summary(float(med), float(q1), float(q3))


RESULT_METRICS = ("auc_minority", "auc_majority", "completed_budget",
                  "total_selection_time")


def aggregate_runs(results) -> dict[str, Summary] | Summary:
    """Median/IQR across runs.

    Given experiment results, returns a per-metric summary dict; given a
    plain numeric sequence, returns its :class:`Summary` directly.
    """
    results = list(results)
    if not results:
        raise ValueError("need at least one result")
    if not isinstance(results[0], ExperimentResult):
        return median_iqr(results)
    out: dict[str, Summary] = {}
    for metric in RESULT_METRICS:
        values = [getattr(r, metric) for r in results]
        if any(v is None for v in values):
            continue
        out[metric] = median_iqr(values)
    return out


def truncate_result(result: ExperimentResult, n_rounds: int) -> ExperimentResult:
    """Result restricted to the first ``n_rounds`` rounds, with AUCs, budget
    and selection time recomputed from the truncated curve."""
    if n_rounds < 1 or n_rounds > result.n_rounds:
        raise ValueError(f"n_rounds must be in [1, {result.n_rounds}]")
    rounds = result.rounds[:n_rounds]
    auc_min, auc_maj = _curve_aucs(rounds)
    return ExperimentResult(
        rounds=list(rounds),
        auc_minority=auc_min,
        auc_majority=auc_maj,
        total_selection_time=float(sum(r.selection_time_s for r in rounds)),
        completed_budget=rounds[-1].labeled_total - result.n_init,
        n_init=result.n_init,
        config=result.config,
        dataset_hash=result.dataset_hash,
    )


def budget_matched(results_by_method: Mapping[str, Sequence[ExperimentResult]],
                   ) -> tuple[int, dict[str, list[ExperimentResult]]]:
    """Truncate every run to the largest round index all methods completed.

    Returns (t_star, truncated results per method). A method with a run that
    completed zero rounds makes the comparison undefined and raises.
    """
    if not results_by_method:
        raise ValueError("no results to match")
    for method, results in results_by_method.items():
        if not results:
            raise ValueError(f"method {method!r} has no results")
        for r in results:
            if r.n_rounds == 0:
                raise ValueError(f"method {method!r} has a run with 0 completed rounds")
    t_star = min(r.n_rounds for results in results_by_method.values() for r in results)
    truncated = {
        method: [truncate_result(r, t_star) for r in results]
        for method, results in results_by_method.items()
    }
    return t_star, truncated


def _curve_aucs(rounds: Sequence[RoundRecord]) -> tuple[float | None, float | None]:
    if len(rounds) < 2:
        return None, None
    xs = [r.labeled_total for r in rounds]
    return (auc_trapezoid(xs, [r.minority_f1 for r in rounds]),
            auc_trapezoid(xs, [r.majority_f1 for r in rounds]))


def run_experiment(cfg: ExperimentConfig, dataset: Dataset, index,
                   initial_state: DatasetState | None = None) -> ExperimentResult:
    """Run the full annotation loop and return the per-round record stream.

    Per round: train the proxy classifier on the labelled set, build the
    subpool with the configured filter, let the strategy pick
    floor(budget/rounds) instances, reveal their labels, and record test
    metrics plus (instrumentation-only) subpool composition. Stops at the
    configured number of rounds, pool exhaustion, an empty selection, or the
    optional wall-clock limit. Deterministic given the four seed streams.
    """
    labels = dataset.labels
    n = dataset.n
    if index.n != n:
        raise ValueError(f"index covers {index.n} instances, dataset has {n}")
    n_classes = labels.n_classes
    if dataset.test_labels.n_classes != n_classes:
        raise ValueError("train and test label spaces differ")
    b = cfg.query_size
    loop = cfg.loop

    if initial_state is None:
        minority_candidates = None
        if cfg.dataset.initial_minority_cluster is not None:
            if dataset.cluster_ids is None:
                raise ValueError(
                    "initial_minority_cluster requires cluster metadata")
            minority_candidates = np.flatnonzero(
                dataset.cluster_ids == cfg.dataset.initial_minority_cluster)
        state = build_initial_split(labels, loop.n_init, loop.per_minority,
                                    seed=cfg.seeds.initial_set,
                                    minority_candidates=minority_candidates)
    else:
        state = initial_state
        if state.n != n:
            raise ValueError("initial state does not match the dataset")
    n_init = state.n_labeled

    filter_params = {
        "anchoral": dict(a=cfg.filter.a, n_neighbors=cfg.filter.n_neighbors,
                         max_subpool=cfg.filter.max_subpool,
                         anchor_strategy=cfg.filter.anchor_strategy,
                         anchor_strategy_overrides=cfg.filter.anchor_strategy_overrides),
        "random_subset": dict(m=cfg.filter.m),
        "seals": dict(k=cfg.filter.k),
        "noop": {},
    }[cfg.filter.type]
    pool_filter = make_filter(cfg.filter.type, **filter_params)
    pool_filter.reset()
    strategy = make_strategy(cfg.strategy.type)

    minority = labels.minority_classes
    emb = dataset.embeddings
    records: list[RoundRecord] = []
    newly_labeled: np.ndarray | None = None
    budget_used = 0
    started = time.perf_counter()

    for t in range(loop.rounds):
        if loop.time_limit is not None and time.perf_counter() - started > loop.time_limit:
            logger.info("round %d: time limit reached, stopping", t)
            break
        if state.n_pool == 0:
            logger.info("round %d: pool exhausted, stopping", t)
            break

        clf = SoftmaxClassifier(
            n_classes=n_classes,
            learning_rate=cfg.train.learning_rate,
            batch_size=cfg.train.batch_size,
            max_epochs=cfg.train.max_epochs,
            min_steps=cfg.train.min_steps,
            early_stop_delta=cfg.train.early_stop_delta,
            seed=derive_seed(cfg.seeds.model_init, t),
        )
        labeled = state.labeled_ids
        clf.fit(emb[labeled], state.labeled_labels(), minority_classes=minority,
                shuffle_seed=derive_seed(cfg.seeds.data_order, t))

        t0 = time.perf_counter()
        subpool = pool_filter.build_subpool(
            state, emb, index, model=clf, newly_labeled=newly_labeled,
            round_seed=derive_seed(cfg.seeds.selection, t, 0))
        query_ids = strategy.select(clf, emb, subpool.ids, b,
                                    rng=derived_rng(cfg.seeds.selection, t, 1))
        selection_time = time.perf_counter() - t0

        if len(query_ids) == 0:
            logger.warning("round %d: filter produced no candidates, stopping", t)
            break
        short_round = len(query_ids) < b
        if short_round:
            logger.warning("round %d: short round, %d of %d instances selected",
                           t, len(query_ids), b)

        test_pred = clf.predict(dataset.test_embeddings)
        f1s = per_class_f1(dataset.test_labels.labels, test_pred, n_classes)
        minority_f1 = float(np.mean(f1s[list(minority)]))
        majority_f1 = float(f1s[labels.majority_class])

        # instrumentation below reads true labels of still-unlabelled
        # instances; nothing selection-facing sees these values
        subpool_minority_frac = (
            float(np.mean(labels.labels[subpool.ids] != labels.majority_class))
            if len(subpool) else 0.0)
        new_minority = int(np.sum(labels.labels[query_ids] != labels.majority_class))

        state.reveal(query_ids, labels)
        budget_used += len(query_ids)
        newly_labeled = np.asarray(query_ids, dtype=np.int64)

        discovered: tuple[int, ...] = ()
        if dataset.cluster_ids is not None:
            lab = state.labeled_ids
            minority_lab = lab[labels.labels[lab] != labels.majority_class]
            discovered = tuple(sorted(set(
                int(c) for c in dataset.cluster_ids[minority_lab])))

        records.append(RoundRecord(
            round_index=t,
            labeled_total=state.n_labeled,
            labeled_per_class=tuple(int(v) for v in state.labeled_per_class(n_classes)),
            per_class_f1=tuple(float(v) for v in f1s),
            minority_f1=minority_f1,
            majority_f1=majority_f1,
            selection_time_s=selection_time if loop.record_timing else 0.0,
            subpool_size=len(subpool),
            subpool_minority_frac=subpool_minority_frac,
            new_minority=new_minority,
            discovered_clusters=discovered,
            new_labeled=len(query_ids),
            short_round=short_round,
        ))

    auc_min, auc_maj = _curve_aucs(records)
    return ExperimentResult(
        rounds=records,
        auc_minority=auc_min,
        auc_majority=auc_maj,
        total_selection_time=float(sum(r.selection_time_s for r in records)),
        completed_budget=budget_used,
        n_init=n_init,
    )


def write_rounds_csv(result: ExperimentResult, path) -> None:
    """Write the per-round record stream with the fixed column schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_CSV_COLUMNS)
        for r in result.rounds:
            writer.writerow([
                r.round_index,
                r.labeled_total,
                ";".join(str(v) for v in r.labeled_per_class),
                repr(r.minority_f1),
                repr(r.majority_f1),
                repr(r.selection_time_s),
                r.subpool_size,
                repr(r.subpool_minority_frac),
                r.new_minority,
                ";".join(str(v) for v in r.discovered_clusters),
            ])


def read_rounds_csv(path) -> list[dict]:
    """Read a rounds.csv back into typed dicts (schema-checked)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != ROUNDS_CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header!r}")
        out = []
        for row in reader:
            vals = dict(zip(ROUNDS_CSV_COLUMNS, row))
            out.append({
                "round": int(vals["round"]),
                "labeled_total": int(vals["labeled_total"]),
                "labeled_per_class": tuple(
                    int(v) for v in vals["labeled_per_class"].split(";") if v),
                "minority_f1": float(vals["minority_f1"]),
                "majority_f1": float(vals["majority_f1"]),
                "selection_time_s": float(vals["selection_time_s"]),
                "subpool_size": int(vals["subpool_size"]),
                "subpool_minority_frac": float(vals["subpool_minority_frac"]),
                "new_minority": int(vals["new_minority"]),
                "discovered_clusters": tuple(
                    int(v) for v in vals["discovered_clusters"].split(";") if v),
            })
    return out

"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they complete. The heavier criteria share a session-scoped 100k
synthetic task and exact retrieval oracle.
"""

import numpy as np
import pytest

from anchoral import (ExactIndex, HnswIndex, IndexParams, SyntheticSpec,
                      aggregate_runs, anchoral_filter, auc_trapezoid,
                      budget_matched, build_initial_split, entropy, exact_knn,
                      generate_synthetic_task, kmeanspp_sample, parse_config_dict,
                      run_experiment, select_anchors, write_rounds_csv)
from anchoral.model import SoftmaxClassifier, macro_f1, softmax
from anchoral.runner import ExperimentResult

from test_filters import brute_force_anchoral_oracle
from test_model import is_linearly_separable, make_separable, manual_clf


def report(number: int, description: str, ok: bool) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {description}")
    assert ok, f"criterion {number} failed: {description}"


# ---------------------------------------------------------------------------
# shared large task: 100k instances, d=32, 1% minority in 4 clusters, the
# initial labelled set restricted to minority cluster 0
# ---------------------------------------------------------------------------

TASK_SPEC = SyntheticSpec(n_total=100000, d=32, minority_fraction=0.01,
                          n_minority_clusters=4, n_majority_clusters=8,
                          cluster_sigma=0.2, cluster_center_scale=5.0,
                          seed=20240501)

BASE_CONFIG = {
    "dataset": {"initial_minority_cluster": 0},
    "index": {"type": "exact"},
    "strategy": {"type": "entropy"},
    "loop": {"budget": 1000, "rounds": 40, "n_init": 100, "per_minority": 5,
             "record_timing": False},
}


@pytest.fixture(scope="session")
def task():
    return generate_synthetic_task(TASK_SPEC, n_test_majority=5000)


@pytest.fixture(scope="session")
def task_index(task):
    return ExactIndex(task.embeddings)


def run_sweep(task, task_index, filter_cfg, n_runs=8) -> list[ExperimentResult]:
    cfg = parse_config_dict({**BASE_CONFIG, "filter": filter_cfg})
    return [run_experiment(cfg.with_seed_offset(off), task, task_index)
            for off in range(n_runs)]


def labeled_minority(result: ExperimentResult) -> int:
    last = result.rounds[-1]
    return last.labeled_total - last.labeled_per_class[0]


@pytest.fixture(scope="session")
def anchoral_runs(task, task_index):
    return run_sweep(task, task_index, {"type": "anchoral"})


def test_criterion_1_closed_form_numerics():
    ok = True
    for c in (2, 4, 10):
        ok &= abs(entropy(np.full(c, 1.0 / c)) - np.log(c)) <= 1e-9
    ok &= abs(auc_trapezoid([0, 1, 2], [0, 1, 2]) - 2.0) <= 1e-12

    rng = np.random.default_rng(0)
    clf = manual_clf(rng.standard_normal((3, 4)) * 0.5, rng.standard_normal(3) * 0.1)
    x = rng.standard_normal(4)
    grad = clf.gradient_embeddings(x[None, :])[0].reshape(3, 4)
    yhat = int(clf.predict(x[None, :])[0])
    eps = 1e-5

    def loss(weights):
        logits = weights @ x + clf.intercept_
        logits = logits - logits.max()
        return -(logits[yhat] - np.log(np.exp(logits).sum()))

    fd = np.zeros_like(grad)
    for c in range(3):
        for j in range(4):
            up, down = clf.coef_.copy(), clf.coef_.copy()
            up[c, j] += eps
            down[c, j] -= eps
            fd[c, j] = (loss(up) - loss(down)) / (2 * eps)
    rel = np.abs(grad - fd).max() / np.abs(fd).max()
    ok &= rel <= 1e-4
    report(1, "closed-form numerics (entropy, trapezoid, gradient embedding)", ok)


def test_criterion_2_index_recall():
    rng = np.random.default_rng(7)
    emb = rng.standard_normal((10000, 32)).astype(np.float32)
    index = HnswIndex(IndexParams(ef_construction=200, ef_search=200,
                                  max_connections=64, seed=1)).fit(emb)
    exact = ExactIndex(emb)
    recalls = []
    for q in range(100):
        approx = {h.id for h in index.query(q, k=50)}
        truth = {h.id for h in exact.query(q, k=50)}
        recalls.append(len(approx & truth) / 50)
    mean_recall = float(np.mean(recalls))
    print(f"    mean recall@50 = {mean_recall:.4f}")
    report(2, "graph index recall@50 >= 0.95 on 10k points", mean_recall >= 0.95)


def test_criterion_3_subpool_bounds(task, task_index):
    cfg_anchoral = parse_config_dict({**BASE_CONFIG, "filter": {"type": "anchoral"}})
    res_a = run_experiment(cfg_anchoral, task, task_index)
    sizes_a = [r.subpool_size for r in res_a.rounds]
    bounded = len(sizes_a) == 40 and all(s <= 1000 for s in sizes_a)

    cfg_seals = parse_config_dict({**BASE_CONFIG, "filter": {"type": "seals"}})
    res_s = run_experiment(cfg_seals, task, task_index)
    sizes_s = [r.subpool_size for r in res_s.rounds]
    nondecreasing = all(b >= a for a, b in zip(sizes_s, sizes_s[1:]))
    exceeds = any(s > 1000 for s in sizes_s)
    print(f"    anchored subpool max={max(sizes_a)}, "
          f"expansion subpool last={sizes_s[-1]}")
    report(3, "anchored subpool stays <= 1000 over 40 rounds; expansion "
              "candidate set grows past 1000", bounded and nondecreasing and exceeds)


def test_criterion_4_anchoral_oracle_equivalence():
    from anchoral import LabelStore

    ok = True
    for trial in range(50):
        rng = np.random.default_rng(5000 + trial)
        n = int(rng.integers(40, 200))
        emb = rng.standard_normal((n, 8)).astype(np.float32)
        labels = np.zeros(n, dtype=int)
        labels[rng.choice(n, size=max(2, n // 8), replace=False)] = 1
        store = LabelStore.from_labels(labels)
        state = build_initial_split(store, n_init=12, per_minority=2,
                                    seed=int(rng.integers(2**31)))
        anchors = select_anchors(state, emb, a=3, round_seed=trial)
        n_neighbors = int(rng.integers(1, 10))
        max_subpool = int(rng.integers(1, 50))
        sub = anchoral_filter(anchors, ExactIndex(emb), state, n_neighbors, max_subpool)
        want_ids, want_scores = brute_force_anchoral_oracle(
            anchors, emb, state, n_neighbors, max_subpool)
        ok &= sub.ids.tolist() == want_ids and sub.scores.tolist() == want_scores
    report(4, "anchored filter matches enumerate-group-average-sort oracle "
              "exactly on 50 seeded small pools", ok)


def test_criterion_5_minority_discovery(task, task_index, anchoral_runs):
    random_subset_runs = run_sweep(task, task_index, {"type": "random_subset"})
    anchoral_minority = [labeled_minority(r) for r in anchoral_runs]
    random_minority = [labeled_minority(r) for r in random_subset_runs]
    ratio = np.median(anchoral_minority) / max(np.median(random_minority), 1)
    discoveries = sum(
        1 for r in anchoral_runs
        if len(set(r.rounds[-1].discovered_clusters) - {0}) >= 1)
    print(f"    anchored minority per run: {anchoral_minority}")
    print(f"    random-subset minority per run: {random_minority}")
    print(f"    median ratio = {ratio:.2f}, uncovered-cluster discoveries = "
          f"{discoveries}/8")
    report(5, "anchored filtering labels >= 1.5x the minority of a 10k random "
              "subset and discovers an initially-uncovered cluster in >= 6/8 runs",
           ratio >= 1.5 and discoveries >= 6)


def test_criterion_6_no_anchoring_ablation(task, task_index, anchoral_runs):
    random_anchor_runs = run_sweep(
        task, task_index, {"type": "anchoral", "anchor_strategy": "random"})
    km = np.median([labeled_minority(r) for r in anchoral_runs])
    rnd = np.median([labeled_minority(r) for r in random_anchor_runs])
    print(f"    kmeans++ anchors median minority = {km:.0f}, "
          f"random anchors median = {rnd:.0f}")
    report(6, "replacing diversity anchors with uniform-random anchors "
              "strictly reduces median labelled minority", rnd < km)


def test_criterion_7_kmeanspp_law():
    pts = np.asarray([[0.0], [1.0], [3.0]])
    trials = 10000
    first_zero = 0
    second_far = 0
    for seed in range(trials):
        out = kmeanspp_sample(pts, a=2, rng=np.random.default_rng(seed))
        if out[0] == 0:
            first_zero += 1
            second_far += int(out[1] == 2)
    p_far = second_far / first_zero
    p_near = 1.0 - p_far
    sigma = np.sqrt(0.9 * 0.1 / first_zero)
    ok = abs(p_far - 0.9) <= 3 * sigma and abs(p_near - 0.1) <= 3 * sigma
    print(f"    conditional P(x=3) = {p_far:.4f} (n={first_zero}, "
          f"3 sigma = {3 * sigma:.4f})")
    report(7, "D-squared sampling conditional probabilities match 1/10 and "
              "9/10 within 3 sigma", ok)


def test_criterion_8_statistical_aggregation():
    summary = aggregate_runs([1, 2, 3, 4])
    ok = summary.median == 2.5 and abs(summary.iqr - 1.5) <= 1e-12

    def fake_result(n_rounds):
        from test_runner import make_result
        return make_result(n_rounds)

    t_star, matched = budget_matched({"a": [fake_result(10)], "b": [fake_result(3)]})
    ok &= t_star == 3
    ok &= all(r.n_rounds == 3 for rs in matched.values() for r in rs)
    report(8, "median/IQR aggregation and budget-matched truncation", ok)


def test_criterion_9_determinism(task, task_index, tmp_path):
    cfg = parse_config_dict({**BASE_CONFIG, "filter": {"type": "anchoral"}})
    res_a = run_experiment(cfg, task, task_index)
    res_b = run_experiment(cfg, task, task_index)
    path_a, path_b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_rounds_csv(res_a, path_a)
    write_rounds_csv(res_b, path_b)
    identical = path_a.read_bytes() == path_b.read_bytes()
    report(9, "identical seeds reproduce a byte-identical rounds.csv", identical)


def test_criterion_10_proxy_model_sanity():
    rng = np.random.default_rng(11)
    X, y = make_separable(rng)
    ok = is_linearly_separable(X, y)
    clf = SoftmaxClassifier(n_classes=2, seed=0).fit(X, y, minority_classes=(1,))
    f1 = macro_f1(y, clf.predict(X), classes=(1,))
    ok &= f1 >= 0.99
    probs = softmax(rng.standard_normal((1000, 6)))
    ok &= np.max(np.abs(probs.sum(axis=1) - 1.0)) <= 1e-6
    print(f"    training minority F1 = {f1:.4f}")
    report(10, "separable training reaches minority F1 >= 0.99; softmax rows "
               "sum to 1", ok)

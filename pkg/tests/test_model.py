import numpy as np
import pytest
from scipy.optimize import linprog
from sklearn.base import clone
from sklearn.metrics import f1_score

from anchoral import SoftmaxClassifier, macro_f1, per_class_f1, softmax


def is_linearly_separable(X, y) -> bool:
    """Hard-margin feasibility oracle: find (w, b) with y_i(w.x_i + b) >= 1."""
    signs = np.where(y == 1, 1.0, -1.0)
    # variables: w (d), b; constraints -s_i*(x_i.w + b) <= -1
    d = X.shape[1]
    a_ub = -signs[:, None] * np.c_[X, np.ones(len(X))]
    b_ub = -np.ones(len(X))
    res = linprog(c=np.zeros(d + 1), A_ub=a_ub, b_ub=b_ub,
                  bounds=[(None, None)] * (d + 1), method="highs")
    return res.status == 0


def make_separable(rng, n_per_class=50, gap=6.0):
    a = rng.standard_normal((n_per_class, 2)) + [gap, 0]
    b = rng.standard_normal((n_per_class, 2)) - [gap, 0]
    X = np.concatenate([a, b])
    y = np.r_[np.zeros(n_per_class, dtype=int), np.ones(n_per_class, dtype=int)]
    return X, y


def manual_clf(coef, intercept):
    clf = SoftmaxClassifier(n_classes=len(intercept))
    clf.coef_ = np.asarray(coef, dtype=np.float64)
    clf.intercept_ = np.asarray(intercept, dtype=np.float64)
    clf.classes_ = np.arange(len(intercept))
    clf.n_features_in_ = clf.coef_.shape[1]
    return clf


class TestFit:
    def test_separable_reaches_high_f1(self, rng):
        X, y = make_separable(rng)
        assert is_linearly_separable(X, y)  # oracle validates the premise
        clf = SoftmaxClassifier(n_classes=2, seed=0).fit(X, y, minority_classes=(1,))
        assert macro_f1(y, clf.predict(X), classes=(1,)) >= 0.99

    def test_bitwise_determinism(self, rng):
        X = rng.standard_normal((80, 5))
        y = rng.integers(0, 3, size=80)
        a = SoftmaxClassifier(n_classes=3, seed=42).fit(X, y, shuffle_seed=7)
        b = SoftmaxClassifier(n_classes=3, seed=42).fit(X, y, shuffle_seed=7)
        assert np.array_equal(a.coef_, b.coef_)
        assert np.array_equal(a.intercept_, b.intercept_)

    def test_min_steps_forces_extra_epochs(self, rng):
        # 100 instances, batch 32 -> 4 steps/epoch -> 25 epochs for 100 steps
        X = rng.standard_normal((100, 4))
        y = rng.integers(0, 2, size=100)
        clf = SoftmaxClassifier(n_classes=2, batch_size=32, max_epochs=10,
                                min_steps=100, seed=1).fit(X, y)
        assert clf.n_steps_ >= 100
        assert clf.n_epochs_ == 25

    def test_respects_max_epochs_when_steps_suffice(self, rng):
        X = rng.standard_normal((400, 4))
        y = rng.integers(0, 2, size=400)
        clf = SoftmaxClassifier(n_classes=2, batch_size=32, max_epochs=3,
                                min_steps=10, early_stop_delta=0.0, seed=1).fit(X, y)
        assert clf.n_epochs_ <= 3

    def test_different_seeds_different_init(self, rng):
        X = rng.standard_normal((50, 4))
        y = rng.integers(0, 2, size=50)
        a = SoftmaxClassifier(n_classes=2, seed=0).fit(X, y)
        b = SoftmaxClassifier(n_classes=2, seed=1).fit(X, y)
        assert not np.array_equal(a.initial_coef_, b.initial_coef_)

    def test_loss_descent(self, rng):
        X, y = make_separable(rng, n_per_class=40, gap=2.0)
        clf = SoftmaxClassifier(n_classes=2, seed=3).fit(X, y)
        final_ce = clf.cross_entropy(X, y)
        init = manual_clf(clf.initial_coef_, clf.initial_intercept_)
        assert final_ce <= init.cross_entropy(X, y)

    def test_single_class_training_is_valid(self, rng):
        X = rng.standard_normal((30, 3))
        y = np.zeros(30, dtype=int)
        clf = SoftmaxClassifier(n_classes=2, min_steps=5, max_epochs=2, seed=0).fit(X, y)
        probs = clf.predict_proba(X)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_empty_labelled_set_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            SoftmaxClassifier(n_classes=2).fit(np.empty((0, 3)), [])

    def test_sklearn_clone_compatible(self):
        clf = SoftmaxClassifier(n_classes=5, learning_rate=0.3)
        cloned = clone(clf)
        assert cloned.get_params() == clf.get_params()


class TestPredictProba:
    def test_zero_weights_uniform(self):
        clf = manual_clf(np.zeros((3, 2)), np.zeros(3))
        probs = clf.predict_proba([[5.0, -2.0]])
        assert np.allclose(probs, 1 / 3)

    def test_bias_log_two(self):
        clf = manual_clf(np.zeros((2, 2)), [np.log(2.0), 0.0])
        probs = clf.predict_proba([[0.3, 0.9]])
        assert np.allclose(probs, [[2 / 3, 1 / 3]], atol=1e-12)

    def test_matches_independent_recomputation(self, rng):
        clf = manual_clf(rng.standard_normal((4, 6)), rng.standard_normal(4))
        X = rng.standard_normal((50, 6))
        probs = clf.predict_proba(X)
        logits = X @ clf.coef_.T + clf.intercept_
        manual = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        assert np.max(np.abs(probs - manual)) <= 1e-9

    def test_rows_sum_to_one(self, rng):
        clf = manual_clf(rng.standard_normal((5, 8)), rng.standard_normal(5))
        probs = clf.predict_proba(rng.standard_normal((1000, 8)))
        assert np.max(np.abs(probs.sum(axis=1) - 1.0)) <= 1e-6
        assert np.all(probs > 0) and np.all(probs < 1)


class TestGradientEmbeddings:
    def test_closed_form_example(self):
        # p = [0.7, 0.3], predicted class 0, x = [1, 2]
        clf = manual_clf(np.zeros((2, 2)), np.log([0.7, 0.3]))
        g = clf.gradient_embeddings(np.asarray([[1.0, 2.0]]))[0]
        assert np.allclose(g, [-0.3, -0.6, 0.3, 0.6], atol=1e-12)

    def test_confident_model_gives_zero_vector(self):
        clf = manual_clf(np.zeros((2, 2)), [200.0, 0.0])
        g = clf.gradient_embeddings(np.asarray([[1.0, 2.0]]))[0]
        assert np.linalg.norm(g) <= 1e-30

    def test_matches_central_finite_differences(self, rng):
        # oracle: d/dW of CE(softmax(Wx+b), yhat) at the predicted label
        clf = manual_clf(rng.standard_normal((3, 4)) * 0.5, rng.standard_normal(3) * 0.1)
        x = rng.standard_normal(4)
        g = clf.gradient_embeddings(x[None, :])[0].reshape(3, 4)
        yhat = int(clf.predict(x[None, :])[0])
        eps = 1e-5

        def loss(W):
            logits = W @ x + clf.intercept_
            logits = logits - logits.max()
            return -(logits[yhat] - np.log(np.exp(logits).sum()))

        fd = np.zeros_like(g)
        for c in range(3):
            for j in range(4):
                up = clf.coef_.copy()
                up[c, j] += eps
                down = clf.coef_.copy()
                down[c, j] -= eps
                fd[c, j] = (loss(up) - loss(down)) / (2 * eps)
        rel_err = np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12)
        assert rel_err <= 1e-4

    def test_norm_decreases_with_confidence(self):
        # higher max-class probability -> smaller gradient embedding
        x = np.asarray([[1.0, 1.0]])
        norms = []
        for p in np.linspace(0.5, 0.99, 12):
            clf = manual_clf(np.zeros((2, 2)), [np.log(p), np.log(1 - p)])
            norms.append(np.linalg.norm(clf.gradient_embeddings(x)[0]))
        assert all(a > b for a, b in zip(norms, norms[1:]))


class TestMacroF1:
    def test_perfect(self):
        y = np.asarray([0, 1, 1, 0, 2])
        assert macro_f1(y, y, classes=(0, 1, 2)) == 1.0

    def test_all_majority_predictions(self):
        y_true = np.asarray([0, 0, 0, 1, 1])
        y_pred = np.zeros(5, dtype=int)
        assert macro_f1(y_true, y_pred, classes=(1,)) == 0.0

    def test_hand_confusion_matrix(self):
        # minority class 1: TP=2, FP=1, FN=1 -> F1 = 2/3
        y_true = np.asarray([1, 1, 1, 0, 0])
        y_pred = np.asarray([1, 1, 0, 1, 0])
        assert macro_f1(y_true, y_pred, classes=(1,)) == pytest.approx(2 / 3)

    def test_empty_classes_rejected(self):
        with pytest.raises(ValueError):
            macro_f1([0, 1], [0, 1], classes=())

    def test_matches_sklearn(self, rng):
        for _ in range(20):
            y_true = rng.integers(0, 4, size=60)
            y_pred = rng.integers(0, 4, size=60)
            classes = [0, 2, 3]
            want = f1_score(y_true, y_pred, labels=classes, average="macro",
                            zero_division=0)
            assert macro_f1(y_true, y_pred, classes) == pytest.approx(want, abs=1e-12)

    def test_per_class_f1_alignment(self, rng):
        y_true = rng.integers(0, 3, size=40)
        y_pred = rng.integers(0, 3, size=40)
        f1s = per_class_f1(y_true, y_pred, 3)
        for c in range(3):
            assert f1s[c] == pytest.approx(
                f1_score(y_true, y_pred, labels=[c], average="macro", zero_division=0))


class TestSoftmaxFunction:
    def test_stability_with_large_logits(self):
        probs = softmax(np.asarray([[1000.0, 1000.0, 999.0]]))
        assert np.isfinite(probs).all()
        assert probs.sum() == pytest.approx(1.0)

"""Linear softmax proxy classifier and classification metrics."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .validation import check_label_array


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax in float64 (max-shifted for stability)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def per_class_f1(y_true, y_pred, n_classes: int) -> np.ndarray:
    """F1 per class; a class with no predicted and no actual positives gets 0."""
    y_true = check_label_array(y_true)
    y_pred = check_label_array(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    out = np.zeros(n_classes, dtype=np.float64)
    for c in range(n_classes):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        denom = 2 * tp + fp + fn
        out[c] = 0.0 if denom == 0 else 2.0 * tp / denom
    return out


def macro_f1(y_true, y_pred, classes) -> float:
    """Unweighted mean F1 over ``classes``."""
    classes = [int(c) for c in classes]
    if not classes:
        raise ValueError("classes must be non-empty")
    f1s = per_class_f1(y_true, y_pred, max(classes) + 1)
    return float(np.mean([f1s[c] for c in classes]))


class SoftmaxClassifier(BaseEstimator, ClassifierMixin):
    """Softmax regression over fixed embeddings, trained with mini-batch
    gradient descent on the cross-entropy.

    Training re-initialises the weights from seeded small-uniform values on
    every ``fit`` call, reshuffles each epoch, runs at least ``min_steps``
    optimisation steps (cycling past ``max_epochs`` if the labelled set is
    small), and keeps a snapshot of the parameters whenever the training
    macro-F1 on the monitored classes improves by more than
    ``early_stop_delta``; after the step floor is met, an epoch without such
    an improvement stops training. The returned parameters are the best
    snapshot, so no validation set is needed.
    """

    def __init__(self, n_classes: int = 2, learning_rate: float = 0.1,
                 batch_size: int = 32, max_epochs: int = 10, min_steps: int = 100,
                 early_stop_delta: float = 1e-5, seed: int = 0):
        self.n_classes = n_classes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.min_steps = min_steps
        self.early_stop_delta = early_stop_delta
        self.seed = seed

    def _validate_hyperparams(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.min_steps < 1:
            raise ValueError("batch_size, max_epochs and min_steps must be >= 1")
        if self.early_stop_delta < 0:
            raise ValueError("early_stop_delta must be >= 0")

    def fit(self, X, y, minority_classes=None, shuffle_seed=None) -> "SoftmaxClassifier":
        """Train on (X, y); ``minority_classes`` are the classes monitored by
        the snapshot metric (all classes when omitted). ``shuffle_seed``
        separates the data-ordering RNG stream from the init stream."""
        self._validate_hyperparams()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("X must be a non-empty 2-d array")
        y = check_label_array(y, n=X.shape[0], n_classes=self.n_classes)
        n, d = X.shape
        monitored = (tuple(int(c) for c in minority_classes)
                     if minority_classes else tuple(range(self.n_classes)))

        init_rng = np.random.default_rng(self.seed)
        W = init_rng.uniform(-0.01, 0.01, size=(self.n_classes, d))
        bias = np.zeros(self.n_classes, dtype=np.float64)
        self.initial_coef_ = W.copy()
        self.initial_intercept_ = bias.copy()
        shuffle_rng = np.random.default_rng(
            self.seed if shuffle_seed is None else shuffle_seed)

        lr = float(self.learning_rate)
        best_f1 = -np.inf
        best = (W.copy(), bias.copy())
        steps = 0
        epoch = 0
        while True:
            perm = shuffle_rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = perm[start:start + self.batch_size]
                Xb = X[batch]
                probs = softmax(Xb @ W.T + bias)
                probs[np.arange(batch.size), y[batch]] -= 1.0
                probs /= batch.size
                W -= lr * (probs.T @ Xb)
                bias -= lr * probs.sum(axis=0)
                steps += 1
            epoch += 1
            train_pred = np.argmax(X @ W.T + bias, axis=1)
            f1 = macro_f1(y, train_pred, monitored)
            improved = f1 - best_f1 > self.early_stop_delta
            if improved:
                best_f1 = f1
                best = (W.copy(), bias.copy())
            if steps >= self.min_steps and (not improved or epoch >= self.max_epochs):
                break

        self.coef_, self.intercept_ = best
        self.classes_ = np.arange(self.n_classes)
        self.n_features_in_ = d
        self.n_epochs_ = epoch
        self.n_steps_ = steps
        self.best_train_f1_ = float(best_f1)
        return self

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise RuntimeError("classifier is not fitted")

    def _validate_X(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"X must be 2-d with {self.n_features_in_} features")
        return X

    def decision_function(self, X) -> np.ndarray:
        X = self._validate_X(X)
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities; rows sum to 1."""
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        # argmax takes the first maximum, i.e. ties go to the lowest class id
        return np.argmax(self.decision_function(X), axis=1)

    def cross_entropy(self, X, y) -> float:
        """Mean cross-entropy of the current parameters on (X, y)."""
        X = self._validate_X(X)
        y = check_label_array(y, n=X.shape[0], n_classes=self.n_classes)
        probs = self.predict_proba(X)
        return float(-np.mean(np.log(probs[np.arange(len(y)), y])))

    def gradient_embeddings(self, X) -> np.ndarray:
        """Last-layer gradient embeddings in closed form.

        For each row x with predicted label yhat = argmax p(x), block c of the
        output is (p_c - [yhat == c]) * x; blocks are concatenated in
        ascending class order, giving vectors of length n_classes * d.
        """
        X = self._validate_X(X)
        probs = self.predict_proba(X)
        yhat = np.argmax(probs, axis=1)
        scale = probs.copy()
        scale[np.arange(X.shape[0]), yhat] -= 1.0
        return (scale[:, :, None] * X[:, None, :]).reshape(X.shape[0], -1)

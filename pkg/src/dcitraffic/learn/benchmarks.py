"""Benchmark classifiers: k-nearest neighbours and one-vs-rest logistic regression.

Both work on flattened windows (W*2 features).
"""

from __future__ import annotations

import numpy as np


def _flat(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(len(X), -1)


def knn_classify(train_X, train_y, x, k=3, n_classes=None) -> int:
    """Majority vote of the ``k`` nearest training points (Euclidean).

    Vote ties go to the class with the smallest summed neighbour distance,
    then the lowest class index.
    """
    train_X = _flat(train_X)
    train_y = np.asarray(train_y, dtype=np.int64)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = np.sqrt(((train_X - x) ** 2).sum(axis=1))
    nn = np.lexsort((train_y, d))[:k]
    n_classes = n_classes or int(train_y.max()) + 1
    votes = np.bincount(train_y[nn], minlength=n_classes)
    dist = np.bincount(train_y[nn], weights=d[nn], minlength=n_classes)
    cands = np.flatnonzero(votes == votes.max())
    return int(min(cands, key=lambda c: (dist[c], c)))


class KnnModel:
    kind = "knn"

    def __init__(self, w: int, n_classes: int, k: int = 3):
        self.w, self.n_classes, self.k = w, n_classes, k
        self.params = {"X": np.zeros((0, 2 * w)), "y": np.zeros(0)}

    def arch(self) -> dict:
        return {"type": "knn", "w": self.w, "d": 2, "k": self.n_classes, "neighbours": self.k,
                "metric": "minkowski", "p": 2}

    def fit(self, X, y) -> "KnnModel":
        self.params = {"X": _flat(X).copy(), "y": np.asarray(y, dtype=np.float64).copy()}
        return self

    def predict(self, X) -> np.ndarray:
        X = _flat(X)
        y = self.params["y"].astype(np.int64)
        return np.array([knn_classify(self.params["X"], y, x, self.k, self.n_classes) for x in X],
                        dtype=np.int64)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logreg_objective(w, b, X, t, lam):
    """L2-regularized binary log-loss: sum_i loss_i + lam/2 * |w|^2 (bias unpenalized)."""
    z = X @ w + b
    loss = np.logaddexp(0.0, z) - t * z
    return float(loss.sum() + 0.5 * lam * np.dot(w, w))


def logreg_gradient(w, b, X, t, lam):
    r = _sigmoid(X @ w + b) - t
    return X.T @ r + lam * w, float(r.sum())


class LogRegModel:
    """K one-vs-rest binary logistic models, trained by full-batch gradient descent.

    ``c`` is the inverse regularization strength (lam = 1/c). The step size
    is 1/L with L the Lipschitz constant of the per-sample-averaged objective.
    """

    kind = "logreg"

    def __init__(self, w: int, n_classes: int, c: float = 1.0, iterations: int = 3000):
        self.w, self.n_classes, self.c, self.iterations = w, n_classes, c, iterations
        self.params = {"W": np.zeros((2 * w, n_classes)), "b": np.zeros(n_classes)}

    def arch(self) -> dict:
        return {"type": "logreg", "w": self.w, "d": 2, "k": self.n_classes, "c": self.c,
                "penalty": "l2", "multiclass": "ovr", "iterations": self.iterations}

    def fit(self, X, y) -> "LogRegModel":
        X = _flat(X)
        y = np.asarray(y, dtype=np.int64)
        n = len(X)
        lam = 1.0 / self.c
        T = (y[:, None] == np.arange(self.n_classes)[None, :]).astype(np.float64)
        Xb = np.hstack([X, np.ones((n, 1))])
        lip = (np.linalg.norm(Xb, 2) ** 2 / 4.0 + lam) / n
        step = 1.0 / lip
        Wb = np.zeros((X.shape[1] + 1, self.n_classes))
        reg = np.full((X.shape[1] + 1, 1), lam)
        reg[-1] = 0.0
        for _ in range(self.iterations):
            R = _sigmoid(Xb @ Wb) - T
            G = (Xb.T @ R + reg * Wb) / n
            Wb -= step * G
        self.params = {"W": Wb[:-1].copy(), "b": Wb[-1].copy()}
        return self

    def scores(self, X) -> np.ndarray:
        return _sigmoid(_flat(X) @ self.params["W"] + self.params["b"])

    def predict(self, X) -> np.ndarray:
        return self.scores(X).argmax(axis=1)

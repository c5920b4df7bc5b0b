"""RMSprop training loop and class-balanced train/validation splitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import Degenerate
from .nn import NeuralNet


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-8
    seed: int = 0
    split: float = 0.7

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")


class RmsProp:
    """cache <- rho*cache + (1-rho)*g^2;  w <- w - lr*g/(sqrt(cache) + eps)."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, rho=0.9, eps=1e-8):
        self.lr, self.rho, self.eps = lr, rho, eps
        self.cache = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            c = self.cache[k]
            c *= self.rho
            c += (1.0 - self.rho) * g * g
            params[k] -= self.lr * g / (np.sqrt(c) + self.eps)


@dataclass
class TrainResult:
    model: NeuralNet
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def _accuracy(model, X, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(model.predict(X) == y))


def train(model: NeuralNet, X, y, cfg: TrainConfig, X_val=None, y_val=None) -> TrainResult:
    """Train a copy of ``model`` with mini-batch RMSprop.

    Curves hold one entry before training (index 0) and one per epoch.
    The shuffle order depends only on ``cfg.seed``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise Degenerate("need at least two classes")
    has_val = X_val is not None and len(X_val) > 0
    if has_val:
        X_val = np.asarray(X_val, dtype=np.float64)
        y_val = np.asarray(y_val, dtype=np.int64)
    model = model.copy()
    opt = RmsProp(model.params, cfg.learning_rate, cfg.rho, cfg.epsilon)
    rng = np.random.default_rng(cfg.seed)
    res = TrainResult(model)

    def record():
        res.train_loss.append(model.loss(X, y))
        res.train_acc.append(_accuracy(model, X, y))
        if has_val:
            res.val_loss.append(model.loss(X_val, y_val))
            res.val_acc.append(_accuracy(model, X_val, y_val))

    record()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(y))
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            _, grads = model.loss_and_grads(X[batch], y[batch])
            opt.step(model.params, grads)
        record()
    return res


def balanced_split(labels, groups=None, fraction=0.7, seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Per-class split of whole groups (sessions) into train/validation.

    Every class keeps the same train fraction; windows of one session never
    straddle the split. Returns sorted index arrays into ``labels``.
    """
    labels = np.asarray(labels)
    groups = np.arange(len(labels)) if groups is None else np.asarray(groups)
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        uniq = np.unique(groups[members])
        if len(uniq) < 2:
            raise Degenerate(f"class {c} has fewer than 2 sessions")
        uniq = rng.permutation(uniq)
        n_train = min(max(1, int(round(fraction * len(uniq)))), len(uniq) - 1)
        chosen = set(uniq[:n_train].tolist())
        for i in members:
            (train_idx if groups[i] in chosen else val_idx).append(i)
    return np.sort(np.array(train_idx, dtype=np.int64)), np.sort(np.array(val_idx, dtype=np.int64))


def fit(model: NeuralNet, X, y, cfg: TrainConfig, groups=None) -> tuple[TrainResult, np.ndarray, np.ndarray]:
    """Split per ``cfg.split`` and train; returns (result, train_idx, val_idx)."""
    tr, va = balanced_split(y, groups, cfg.split, cfg.seed)
    X = np.asarray(X)
    y = np.asarray(y)
    return train(model, X[tr], y[tr], cfg, X[va], y[va]), tr, va

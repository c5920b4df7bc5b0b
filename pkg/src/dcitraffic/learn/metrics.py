"""Accuracy, macro precision/recall/F-score and confusion matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def f_score(p: float, r: float) -> float:
    """Harmonic mean of precision and recall (0 when both are 0)."""
    return 0.0 if p + r == 0 else 2.0 * r * p / (r + p)


def confusion_counts(y_true, y_pred, n_classes: int, n_pred: int | None = None) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class.

    ``n_pred`` may exceed ``n_classes`` to hold an extra reject column.
    """
    n_pred = n_pred or n_classes
    C = np.zeros((n_classes, n_pred), dtype=np.int64)
    np.add.at(C, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return C


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f_score: float
    confusion: np.ndarray  # row-normalized, rows = true
    counts: np.ndarray
    per_class: list[dict]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
            "confusion": self.confusion.tolist(),
            "counts": self.counts.tolist(),
            "per_class": self.per_class,
        }


def report_from_counts(C: np.ndarray) -> EvalReport:
    """Metrics from raw confusion counts.

    Macro averages run over classes present in the truth set. A class never
    predicted has precision 0. Macro F is the mean of per-class F-scores.
    """
    C = np.asarray(C, dtype=np.int64)
    k = C.shape[0]
    total = int(C.sum())
    accuracy = float(np.trace(C[:, :k]) / total) if total else float("nan")
    rows = C.sum(axis=1)
    cols = C.sum(axis=0)
    per_class = []
    for c in range(k):
        tp = int(C[c, c])
        p = tp / cols[c] if cols[c] else 0.0
        r = tp / rows[c] if rows[c] else 0.0
        per_class.append({"class": c, "support": int(rows[c]), "precision": float(p),
                          "recall": float(r), "f_score": f_score(p, r)})
    present = [pc for pc in per_class if pc["support"] > 0]
    mean = (lambda key: float(np.mean([pc[key] for pc in present]))) if present else (lambda key: float("nan"))
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = np.where(rows[:, None] > 0, C / np.maximum(rows[:, None], 1), 0.0)
    return EvalReport(accuracy, mean("precision"), mean("recall"), mean("f_score"),
                      norm, C, per_class)


def evaluate_predictions(y_true, y_pred, n_classes: int, n_pred: int | None = None) -> EvalReport:
    return report_from_counts(confusion_counts(y_true, y_pred, n_classes, n_pred))


def evaluate(model, X, y) -> EvalReport:
    return evaluate_predictions(y, model.predict(X), model.n_classes)

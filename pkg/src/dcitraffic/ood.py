"""Out-of-distribution gate on classifier softmax outputs.

Each class keeps a reference set of training softmax vectors and a kernel
covariance. A new output is scored by the kernelized spatial depth (KSD)
of the vector against the reference set of its arg-max class, and rejected
when that depth falls strictly below the threshold ``t``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArtifactMismatch, EmptyReferenceSet, EmptyTestSet, SingularCovariance
from .learn.metrics import evaluate_predictions

RIDGE = 1e-6
_GRAM_CHUNK = 1 << 20  # difference entries whitened per block
MAX_REFS = 500
OOD = -1


def spatial_sign(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    n = np.linalg.norm(y)
    return np.zeros_like(y) if n == 0 else y / n


def _coincident(y: np.ndarray, refs: np.ndarray) -> np.ndarray:
    return np.all(refs == y, axis=1)


def _denominator(y: np.ndarray, refs: np.ndarray) -> int:
    # |refs U {y}| - 1
    return len(refs) - (1 if np.any(_coincident(y, refs)) else 0)


def spatial_depth(y, refs) -> float:
    """Sample spatial depth of ``y`` with respect to the rows of ``refs``."""
    y = np.asarray(y, dtype=np.float64)
    refs = np.atleast_2d(np.asarray(refs, dtype=np.float64))
    if refs.size == 0:
        raise EmptyReferenceSet("reference set is empty")
    diff = refs - y
    norms = np.linalg.norm(diff, axis=1)
    keep = norms > 0
    total = (diff[keep] / norms[keep, None]).sum(axis=0)
    denom = _denominator(y, refs)
    if denom == 0:
        return 1.0
    return float(min(1.0, max(0.0, 1.0 - np.linalg.norm(total) / denom)))


def _check_pd(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
        raise SingularCovariance("covariance must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("covariance is not positive definite") from exc


def gaussian_kernel(x, y, cov) -> float:
    """exp(-(x - y)^T cov^{-1} (x - y))."""
    chol = _check_pd(cov)
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    z = np.linalg.solve(chol, d)
    return float(np.exp(-np.dot(z, z)))


def linear_kernel(x, y) -> float:
    return float(np.dot(x, y))


def _pairwise(A, B, fn) -> np.ndarray:
    """fn applied to blocks of pairwise differences A_i - B_j, giving an (|A|, |B|) matrix."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    out = np.empty((len(A), len(B)))
    rows = max(1, _GRAM_CHUNK // max(1, len(B) * A.shape[1]))
    for s in range(0, len(A), rows):
        diff = (A[s:s + rows, None, :] - B[None, :, :]).reshape(-1, A.shape[1])
        out[s:s + rows] = fn(diff).reshape(-1, len(B))
    return out


class GaussianKernel:
    """Vectorized generalized Gaussian kernel for a fixed covariance."""

    def __init__(self, cov):
        self.cov = np.asarray(cov, dtype=np.float64)
        self._chol = _check_pd(self.cov)

    def _mahalanobis2(self, diff) -> np.ndarray:
        z = np.linalg.solve(self._chol, diff.T)
        return (z * z).sum(0)

    def gram(self, A, B) -> np.ndarray:
        return _pairwise(A, B, lambda d: np.exp(-self._mahalanobis2(d)))

    def feature_dist2(self, A, B) -> np.ndarray:
        """||phi(a) - phi(b)||^2 = 2 - 2 k(a, b), evaluated as -2 expm1(-q) so that
        nearby points keep full relative precision."""
        return _pairwise(A, B, lambda d: -2.0 * np.expm1(-self._mahalanobis2(d)))


class LinearKernel:
    def gram(self, A, B) -> np.ndarray:
        return np.atleast_2d(A) @ np.atleast_2d(B).T

    def feature_dist2(self, A, B) -> np.ndarray:
        return _pairwise(A, B, lambda d: (d * d).sum(1))


def ksd_batch(Y, refs, kernel, ref_dist2: np.ndarray | None = None) -> np.ndarray:
    """Kernelized spatial depth of every row of ``Y`` against ``refs``.

    With D(a, b) = ||phi(a) - phi(b)||^2 the squared feature-space distance,
    the inner product of two feature-space differences from y is
    (D(x_i, y) + D(x_j, y) - D(x_i, x_j)) / 2. Dividing by the norms
    sqrt(D(x_i, y)) sqrt(D(x_j, y)) and summing over i, j gives

        || sum_i S(phi(x_i) - phi(y)) ||^2 = (sum_i v_i)(sum_i sqrt(D_iy)) - v^T D_xx v / 2

    with v_i = 1 / sqrt(D_iy). Working with distances rather than raw kernel
    values avoids cancellation when every kernel value is close to one.
    Reference points coinciding with y in feature space are dropped.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    refs = np.atleast_2d(np.asarray(refs, dtype=np.float64))
    if refs.size == 0:
        raise EmptyReferenceSet("reference set is empty")
    Dxx = kernel.feature_dist2(refs, refs) if ref_dist2 is None else ref_dist2
    Dyx = kernel.feature_dist2(Y, refs)  # (q, l)
    keep = Dyx > 0
    root = np.sqrt(Dyx)
    v = np.where(keep, 1.0 / np.where(keep, root, 1.0), 0.0)
    sq = v.sum(1) * root.sum(1) - 0.5 * np.einsum("qi,ij,qj->q", v, Dxx, v)
    # |refs U {y}| - 1, as in the sample spatial depth
    denom = len(refs) - (~keep).any(axis=1).astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = 1.0 - np.sqrt(np.maximum(sq, 0.0)) / denom
    depth = np.where(denom == 0, 1.0, depth)
    return np.clip(depth, 0.0, 1.0)


def ksd(y, refs, cov=None, kernel=None) -> float:
    """KSD of one vector; Gaussian kernel with ``cov`` unless ``kernel`` is given."""
    if kernel is None:
        if cov is None:
            raise ValueError("need a covariance or a kernel")
        kernel = GaussianKernel(cov)
    return float(ksd_batch(np.asarray(y)[None], refs, kernel)[0])


def estimate_covariance(vectors, ridge: float = RIDGE) -> np.ndarray:
    """Sample covariance (ddof=1) of the rows plus ``ridge`` times the identity."""
    V = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if len(V) < 2:
        raise EmptyReferenceSet("need at least two vectors for a covariance")
    cov = np.cov(V, rowvar=False, ddof=1).reshape(V.shape[1], V.shape[1])
    cov = 0.5 * (cov + cov.T)
    return cov + ridge * np.eye(V.shape[1])


@dataclass
class ClassReferenceSet:
    vectors: np.ndarray  # (l, K)
    cov: np.ndarray  # (K, K)
    _kernel: GaussianKernel | None = field(default=None, repr=False)
    _dist2: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if len(self.vectors) < 2:
            raise EmptyReferenceSet("a reference set needs at least two vectors")

    @property
    def kernel(self) -> GaussianKernel:
        if self._kernel is None:
            self._kernel = GaussianKernel(self.cov)
            self._dist2 = self._kernel.feature_dist2(self.vectors, self.vectors)
        return self._kernel

    def depth(self, Y) -> np.ndarray:
        kernel = self.kernel
        return ksd_batch(Y, self.vectors, kernel, self._dist2)


@dataclass
class OodDetector:
    refs: list[ClassReferenceSet]
    threshold: float = 0.0
    ridge: float = RIDGE
    model_hash: str = ""

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")

    @property
    def n_classes(self) -> int:
        return len(self.refs)

    def depths(self, probs) -> tuple[np.ndarray, np.ndarray]:
        """(arg-max class, KSD against that class's reference set) per row."""
        P = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        k = P.argmax(axis=1)
        d = np.empty(len(P))
        for c in np.unique(k):
            rows = k == c
            d[rows] = self.refs[c].depth(P[rows])
        return k, d

    def decide(self, probs, threshold: float | None = None) -> np.ndarray:
        """Class index per row, or ``OOD`` (-1) where depth < threshold."""
        t = self.threshold if threshold is None else threshold
        k, d = self.depths(probs)
        return np.where(d < t, OOD, k)

    def with_threshold(self, t: float) -> "OodDetector":
        return OodDetector(self.refs, t, self.ridge, self.model_hash)

    def to_dict(self) -> dict:
        return {
            "format": "dcitraffic-ood",
            "version": 1,
            "threshold": self.threshold,
            "ridge": self.ridge,
            "model_hash": self.model_hash,
            "classes": [{"vectors": r.vectors.tolist(), "cov": r.cov.tolist()} for r in self.refs],
        }

    @classmethod
    def from_dict(cls, d: dict, model_hash: str | None = None) -> "OodDetector":
        if d.get("format") != "dcitraffic-ood" or d.get("version") != 1:
            raise ArtifactMismatch("not a version-1 OOD detector")
        if model_hash is not None and d["model_hash"] != model_hash:
            raise ArtifactMismatch("detector was tuned against a different model")
        refs = [ClassReferenceSet(np.array(c["vectors"]), np.array(c["cov"])) for c in d["classes"]]
        return cls(refs, d["threshold"], d["ridge"], d["model_hash"])


def save_detector(det: OodDetector, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(det.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_detector(path, model_hash: str | None = None) -> OodDetector:
    with open(path, encoding="utf-8") as fh:
        return OodDetector.from_dict(json.load(fh), model_hash)


def build_detector(train_probs, train_labels, n_classes: int, *, ridge: float = RIDGE,
                   max_refs: int = MAX_REFS, seed: int = 0, model_hash: str = "") -> OodDetector:
    """Reference sets from training softmax vectors grouped by true class.

    Sets larger than ``max_refs`` are uniformly subsampled with ``seed``.
    The threshold starts at 0 (no rejections).
    """
    P = np.asarray(train_probs, dtype=np.float64)
    labels = np.asarray(train_labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    refs = []
    for c in range(n_classes):
        V = P[labels == c]
        if len(V) < 2:
            raise EmptyReferenceSet(f"class {c} has fewer than two training vectors")
        if len(V) > max_refs:
            V = V[np.sort(rng.choice(len(V), max_refs, replace=False))]
        refs.append(ClassReferenceSet(V, estimate_covariance(V, ridge)))
    return OodDetector(refs, 0.0, ridge, model_hash)


def classify_with_ood(detector: OodDetector, classifier, x) -> int:
    """Arg-max class of ``classifier`` on window ``x``, or ``OOD``."""
    probs = classifier.predict_proba(np.asarray(x)[None])
    return int(detector.decide(probs)[0])


def tune_threshold(detector: OodDetector, test_probs) -> float:
    """Largest t accepting every test vector under the strict d < t rule,
    i.e. the minimum test-set depth."""
    P = np.atleast_2d(np.asarray(test_probs, dtype=np.float64))
    if P.size == 0:
        raise EmptyTestSet("no test vectors")
    return float(detector.depths(P)[1].min())


def threshold_from_depths(depths: Sequence[float]) -> float:
    d = np.asarray(depths, dtype=np.float64)
    if d.size == 0:
        raise EmptyTestSet("no test depths")
    return float(d.min())


def sweep(detector: OodDetector, probs, labels, thresholds, heldout_probs=None) -> list[dict]:
    """F-score versus threshold on labeled in-distribution windows.

    Rejected windows count as misses of their true class (an extra reject
    column in the confusion counts). When ``heldout_probs`` is given, each
    row also reports the fraction of those windows rejected.
    """
    labels = np.asarray(labels, dtype=np.int64)
    K = detector.n_classes
    k, d = detector.depths(probs)
    dh = None if heldout_probs is None else detector.depths(heldout_probs)[1]
    out = []
    for t in thresholds:
        decisions = np.where(d < t, K, k)
        rep = evaluate_predictions(labels, decisions, K, K + 1)
        row = {"t": float(t), "f_score": rep.f_score, "accuracy": rep.accuracy,
               "rejected": float(np.mean(d < t))}
        if dh is not None:
            row["heldout_rejected"] = float(np.mean(dh < t))
        out.append(row)
    return out


def model_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()

"""Distance-based statistics: pairwise matrices, clustering, classification.

The elastic aligner is only locally optimal, so the pairwise distance is
computed in both role orderings and symmetrised by averaging; the residual
asymmetry is logged.  Clustering is standard average linkage with an elbow
stop; classification is direct zero-one-loss threshold search with
leave-one-out cross-validation.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from .alignment import elastic_distance
from .errors import ValidationError

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Pairwise distance matrix
# ---------------------------------------------------------------------------

@dataclass
class DistanceMatrix:
    """Symmetric pairwise elastic distances with curve ids."""

    values: np.ndarray
    labels: list[str]
    max_asymmetry: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        n = values.shape[0]
        if values.shape != (n, n):
            raise ValidationError("distance matrix must be square")
        if len(self.labels) != n:
            raise ValidationError("one label per row required")
        if not np.allclose(values, values.T, atol=1e-12):
            raise ValidationError("distance matrix must be symmetric")
        if np.any(np.diag(values) != 0.0):
            raise ValidationError("distance matrix diagonal must be zero")
        if np.any(values < 0.0):
            raise ValidationError("distances must be non-negative")
        self.values = values

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.labels)
            for row in self.values:
                writer.writerow([repr(float(v)) for v in row])

    @staticmethod
    def from_csv(path) -> "DistanceMatrix":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValidationError("empty matrix file")
        labels = rows[0]
        values = np.array([[float(v) for v in row] for row in rows[1:]])
        return DistanceMatrix(values, labels)


_POOL_CURVES = None


def _pool_init(curves):
    global _POOL_CURVES
    _POOL_CURVES = curves


def _pair_distances(args):
    i, j, eps, max_sweeps, restarts = args
    ci, cj = _POOL_CURVES[i], _POOL_CURVES[j]
    dij = elastic_distance(ci, cj, eps=eps, max_sweeps=max_sweeps,
                           restarts=restarts, polygon="second")
    dji = elastic_distance(cj, ci, eps=eps, max_sweeps=max_sweeps,
                           restarts=restarts, polygon="second")
    return i, j, dij, dji


def distance_matrix(curves, closed: bool | None = None, restarts: int = 0,
                    eps: float = 1e-4, max_sweeps: int = 50, labels=None,
                    jobs: int = 1) -> DistanceMatrix:
    """All pairwise elastic distances, symmetrised over both role orderings.

    Every pair is aligned twice (each curve once in the warped-polygon
    role); the two distances are averaged and the largest gap is stored as
    ``max_asymmetry``.  ``jobs > 1`` computes pairs in a process pool.
    """
    if isinstance(curves, dict):
        labels = list(curves.keys()) if labels is None else list(labels)
        curves = list(curves.values())
    else:
        curves = list(curves)
        if labels is None:
            labels = [f"curve_{i}" for i in range(len(curves))]
    n = len(curves)
    if n < 2:
        raise ValidationError("need at least two curves")
    dim = curves[0].dim
    flag = curves[0].closed if closed is None else closed
    for c in curves:
        if c.dim != dim:
            raise ValidationError("curves must share their ambient dimension")
        if c.closed != flag:
            raise ValidationError("curves mix open and closed flags")

    tasks = [(i, j, eps, max_sweeps, restarts)
             for i in range(n) for j in range(i + 1, n)]
    if jobs and jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_pool_init,
                                 initargs=(curves,)) as pool:
            results = list(pool.map(_pair_distances, tasks, chunksize=4))
    else:
        _pool_init(curves)
        results = [_pair_distances(t) for t in tasks]

    values = np.zeros((n, n))
    max_gap = 0.0
    for i, j, dij, dji in results:
        values[i, j] = values[j, i] = 0.5 * (dij + dji)
        max_gap = max(max_gap, abs(dij - dji))
    if max_gap > 0.0:
        logger.info("distance_matrix: largest role-ordering asymmetry %.3g",
                    max_gap)
    return DistanceMatrix(values, labels, max_asymmetry=max_gap)


# ---------------------------------------------------------------------------
# Average-linkage clustering with elbow stopping
# ---------------------------------------------------------------------------

@dataclass
class ClusterResult:
    labels: np.ndarray
    merge_heights: np.ndarray
    n_clusters: int


def _elbow_clusters(heights: np.ndarray, n: int) -> int:
    """Cut before the merge with the largest relative height increase.

    Merges are scanned from the last one downwards; ties keep the first hit
    (fewest clusters).  Needs at least two merges to compare.
    """
    if n < 3:
        raise ValidationError(
            "elbow criterion needs at least 3 curves; pass k explicitly")
    best_idx, best_ratio = None, -np.inf
    for i in range(n - 2, 0, -1):  # merge index, 0-based
        prev, curr = heights[i - 1], heights[i]
        if prev <= 0.0:
            ratio = np.inf if curr > 0.0 else 0.0
        else:
            ratio = (curr - prev) / prev
        if ratio > best_ratio:
            best_idx, best_ratio = i, ratio
    return n - best_idx


def average_linkage(matrix: DistanceMatrix, k: int | None = None) -> ClusterResult:
    """Agglomerative average-linkage clustering of a distance matrix.

    Cuts the dendrogram at ``k`` clusters when given, otherwise at the elbow
    of the merge heights.
    """
    n = matrix.n
    if k is not None and (k < 1 or k > n):
        raise ValidationError(f"k must lie in 1..{n}")
    merger = linkage(squareform(matrix.values, checks=False), method="average")
    heights = merger[:, 2]
    if k is None:
        k = _elbow_clusters(heights, n)
    labels = fcluster(merger, t=k, criterion="maxclust")
    return ClusterResult(labels=labels, merge_heights=heights, n_clusters=k)


# ---------------------------------------------------------------------------
# Zero-one-loss threshold classification
# ---------------------------------------------------------------------------

@dataclass
class ThresholdClassifier:
    """Classify positive when any feature exceeds its threshold.

    ``rule`` is "single" (one distance feature) or "or" (either of two
    distances may trigger a positive call).
    """

    thresholds: tuple
    rule: str
    train_accuracy: float

    def predict(self, features) -> np.ndarray:
        f = _as_feature_matrix(features)
        if f.shape[1] != len(self.thresholds):
            raise ValidationError("feature count does not match classifier")
        hits = f > np.asarray(self.thresholds)[None, :]
        return hits.any(axis=1).astype(int)

    def to_json_dict(self, loo_accuracy=None) -> dict:
        out = {
            "thresholds": [float(v) for v in self.thresholds],
            "rule": self.rule,
            "train_accuracy": float(self.train_accuracy),
        }
        if loo_accuracy is not None:
            out["loo_accuracy"] = float(loo_accuracy)
        return out


def _as_feature_matrix(features) -> np.ndarray:
    f = np.asarray(features, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2 or f.shape[1] not in (1, 2):
        raise ValidationError("features must be one or two distance columns")
    return f


def _candidates(column: np.ndarray) -> np.ndarray:
    """Midpoints between distinct values plus all-positive/all-negative rules.

    min-1 classifies every subject positive; the maximum value itself
    classifies every subject negative (the rule is a strict >), which also
    covers the degenerate all-equal column.
    """
    uniq = np.unique(column)
    mids = 0.5 * (uniq[:-1] + uniq[1:])
    return np.concatenate([[uniq[0] - 1.0], mids, [uniq[-1]]])


def fit_threshold(features, labels) -> ThresholdClassifier:
    """Exhaustive zero-one-loss threshold search.

    Single feature: best midpoint threshold, ties to the smaller value.
    Two features: exhaustive grid over both candidate sets for the OR rule,
    ties broken lexicographically.
    """
    f = _as_feature_matrix(features)
    y = np.asarray(labels)
    if f.shape[0] != y.shape[0]:
        raise ValidationError("labels must align with features")
    if f.shape[0] == 0:
        raise ValidationError("need at least one subject")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be binary 0/1")
    n = f.shape[0]
    if f.shape[1] == 1:
        cands = _candidates(f[:, 0])
        pred = f[None, :, 0] > cands[:, None]
        errors = np.sum(pred != y[None, :], axis=1)
        best = int(np.argmin(errors))  # first minimum = smallest threshold
        return ThresholdClassifier((float(cands[best]),), "single",
                                   1.0 - errors[best] / n)
    c1 = _candidates(f[:, 0])
    c2 = _candidates(f[:, 1])
    pred2 = f[None, :, 1] > c2[:, None]
    best_err, best_pair = None, None
    for th1 in c1:
        hit1 = f[:, 0] > th1
        errors = np.sum((hit1[None, :] | pred2) != y[None, :], axis=1)
        idx = int(np.argmin(errors))
        if best_err is None or errors[idx] < best_err:
            best_err, best_pair = int(errors[idx]), (float(th1), float(c2[idx]))
    return ThresholdClassifier(best_pair, "or", 1.0 - best_err / n)


def loo_cv(features, labels) -> float:
    """Leave-one-out accuracy of the refitted threshold classifier.

    Folds whose training part contains a single class are fitted on that
    part as-is (the trivial all-positive/all-negative rule wins there).
    """
    f = _as_feature_matrix(features)
    y = np.asarray(labels)
    n = f.shape[0]
    if n < 2:
        raise ValidationError("leave-one-out needs at least two subjects")
    correct = 0
    for i in range(n):
        mask = np.arange(n) != i
        clf = fit_threshold(f[mask], y[mask])
        correct += int(clf.predict(f[i:i + 1])[0] == y[i])
    return correct / n

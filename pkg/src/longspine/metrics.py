"""Verification and grading metrics: rank-statistic AUC with an explicit
ROC sweep, confusion matrices, average class accuracy and the pair
distance histogram.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class MetricsReport:
    auc: float | None = None
    roc_points: list[tuple[float, float]] | None = None
    confusion: list[list[int]] | None = None
    avg_class_accuracy: float | None = None
    per_class_counts: list[int] | None = None
    histogram: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "auc": self.auc,
            "roc_points": self.roc_points,
            "confusion": self.confusion,
            "avg_class_accuracy": self.avg_class_accuracy,
            "per_class_counts": self.per_class_counts,
            "histogram": self.histogram,
            "extra": self.extra,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @staticmethod
    def load(path: str | Path) -> "MetricsReport":
        d = json.loads(Path(path).read_text())
        return MetricsReport(
            auc=d.get("auc"),
            roc_points=[tuple(p) for p in d["roc_points"]] if d.get("roc_points") else None,
            confusion=d.get("confusion"),
            avg_class_accuracy=d.get("avg_class_accuracy"),
            per_class_counts=d.get("per_class_counts"),
            histogram=d.get("histogram"),
            extra=d.get("extra") or {},
        )


def pair_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"embedding widths differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def roc_auc(scores, labels) -> tuple[float, list[tuple[float, float]]]:
    """AUC by the rank statistic (ties count one half) plus the ROC curve
    from a sweep over the distinct score thresholds.

    Larger score must mean "more likely positive".
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise MetricError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("both classes must be present to compute a ROC")

    # midranks: average rank within tie groups
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    auc = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    points = [(0.0, 0.0)]
    for t in np.unique(scores)[::-1]:
        predicted = scores >= t
        tpr = float((predicted & (labels == 1)).sum()) / n_pos
        fpr = float((predicted & (labels == 0)).sum()) / n_neg
        points.append((fpr, tpr))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return float(auc), points


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def avg_class_accuracy(confusion) -> float:
    """Mean over true classes of the diagonal of the row-normalised
    confusion matrix."""
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise MetricError(f"confusion matrix must be square, got {cm.shape}")
    row_sums = cm.sum(axis=1)
    if (row_sums == 0).any():
        bad = int(np.nonzero(row_sums == 0)[0][0])
        raise MetricError(f"true class {bad} has no samples")
    return float((np.diag(cm) / row_sums).mean())


def distance_histogram(distances, labels, bins: int = 20) -> dict:
    """Per-label binned counts over [0, max distance]."""
    distances = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels)
    top = float(distances.max()) if distances.size and distances.max() > 0 else 1.0
    edges = np.linspace(0.0, top, bins + 1)
    pos, _ = np.histogram(distances[labels == 1], bins=edges)
    neg, _ = np.histogram(distances[labels == 0], bins=edges)
    return {
        "edges": edges.tolist(),
        "positive_counts": pos.tolist(),
        "negative_counts": neg.tolist(),
    }


def spearman_rho(xs, ys) -> float:
    """Rank correlation (midranks for ties); used for learning-curve
    monotonicity checks over a handful of points."""
    def midranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        ranks = np.empty(v.size)
        i = 0
        sv = v[order]
        while i < v.size:
            j = i
            while j + 1 < v.size and sv[j + 1] == sv[i]:
                j += 1
            ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return ranks

    rx, ry = midranks(xs), midranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)

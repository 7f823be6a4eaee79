"""Foreground-classifier evaluation and dataset statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .geometry import Scene, points_in_box

DECISION_THRESHOLD = 0.5


@dataclass
class ClassifierReport:
    """Hard metrics at the 0.5 decision threshold plus interpolated AP."""

    accuracy: float
    precision: float
    recall: float
    ap: float
    n_recall: int
    num_pairs: int
    num_positive_labels: int
    num_positive_predictions: int
    degenerate: bool = False
    degenerate_reasons: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "ap": self.ap,
            "n_recall": self.n_recall,
            "num_pairs": self.num_pairs,
            "num_positive_labels": self.num_positive_labels,
            "num_positive_predictions": self.num_positive_predictions,
            "degenerate": self.degenerate,
            "degenerate_reasons": list(self.degenerate_reasons),
        }


def average_precision(scores: np.ndarray, labels: np.ndarray, n_recall: int) -> float:
    """Interpolated AP at n_recall evenly spaced recall levels in (0, 1].

    Operating points are the distinct score thresholds (predict positive at
    score >= t); the precision credited to a recall level is the maximum
    precision among operating points reaching at least that recall. Ranking
    ties resolve by ascending original index via a stable sort, though tied
    scores always share one operating point.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    positives = int(np.sum(labels == 1))
    if positives == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order] == 1
    tp_cum = np.cumsum(sorted_labels)
    ranks = np.arange(1, len(scores) + 1)
    # Operating points sit at the last element of each tied-score group.
    group_end = np.ones(len(scores), dtype=bool)
    group_end[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    precisions = tp_cum[group_end] / ranks[group_end]
    recalls = tp_cum[group_end] / positives
    # Best precision achievable at or beyond each operating point.
    best_at_or_after = np.maximum.accumulate(precisions[::-1])[::-1]
    levels = np.arange(1, n_recall + 1) / n_recall
    slots = np.searchsorted(recalls, levels, side="left")
    reachable = slots < len(recalls)
    credited = np.where(reachable, best_at_or_after[np.minimum(slots, len(recalls) - 1)], 0.0)
    return float(credited.mean())


def classifier_metrics(
    scores: np.ndarray, labels: np.ndarray, n_recall: int = 40
) -> ClassifierReport:
    """Accuracy/precision/recall at score > 0.5 plus interpolated AP."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if len(scores) == 0:
        raise ValueError("classifier_metrics needs at least one (score, label) pair")
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores vs {len(labels)} labels")
    if n_recall < 2:
        raise ValueError(f"n_recall must be at least 2, got {n_recall}")

    predicted = scores > DECISION_THRESHOLD
    actual = labels == 1
    tp = int(np.sum(predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    num_pos_pred = int(np.sum(predicted))
    num_pos_label = int(np.sum(actual))

    degenerate_reasons: List[str] = []
    accuracy = (tp + tn) / len(scores)
    if num_pos_pred:
        precision = tp / num_pos_pred
    else:
        precision = 0.0
        degenerate_reasons.append("no positive predictions")
    if num_pos_label:
        recall = tp / num_pos_label
        ap = average_precision(scores, labels, n_recall)
    else:
        recall = 0.0
        ap = 0.0
        degenerate_reasons.append("no positive labels")

    return ClassifierReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        ap=ap,
        n_recall=n_recall,
        num_pairs=len(scores),
        num_positive_labels=num_pos_label,
        num_positive_predictions=num_pos_pred,
        degenerate=bool(degenerate_reasons),
        degenerate_reasons=degenerate_reasons,
    )


@dataclass
class RangeBinStats:
    """Mean contained-point count per distance bin (None for empty bins)."""

    edges: List[float]
    mean_points: List[Optional[float]]
    box_counts: List[int]

    def to_dict(self) -> dict:
        return {
            "edges": list(self.edges),
            "mean_points": list(self.mean_points),
            "box_counts": list(self.box_counts),
        }


def points_per_object_by_range(
    scenes: Sequence[Scene], range_bins: Sequence[float]
) -> RangeBinStats:
    """Average number of points per box, binned by box-center distance.

    `range_bins` are strictly increasing edges; bin i covers
    [edges[i], edges[i+1]). Boxes beyond the last edge are ignored.
    """
    edges = [float(e) for e in range_bins]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"range_bins must be strictly increasing edges, got {range_bins}")
    n_bins = len(edges) - 1
    totals = np.zeros(n_bins, dtype=np.float64)
    counts = np.zeros(n_bins, dtype=np.int64)
    for scene in scenes:
        for box in scene.boxes:
            distance = float(np.linalg.norm(box.center))
            slot = int(np.searchsorted(edges, distance, side="right")) - 1
            if slot < 0 or slot >= n_bins:
                continue
            contained = int(np.sum(points_in_box(scene.cloud.xyz, box)))
            totals[slot] += contained
            counts[slot] += 1
    means: List[Optional[float]] = [
        (totals[i] / counts[i]) if counts[i] else None for i in range(n_bins)
    ]
    return RangeBinStats(edges=edges, mean_points=means, box_counts=[int(c) for c in counts])


def format_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Aligned-column text table."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for r, row in enumerate(cells):
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip())
        if r == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)

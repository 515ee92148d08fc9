"""Classification metrics and the one-hop neighbor-label analysis.

Metrics with a zero denominator return None (an explicit undefined
marker), never a silent zero; aggregations skip undefined entries and
report how many were skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GraphDataset
from .sparse import SparseMatrix, spmm


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts for a designated positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_counts(preds, targets, positive_class) -> ConfusionCounts:
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.shape != targets.shape:
        raise ValueError("predictions and targets must have equal length")
    pred_pos = preds == positive_class
    true_pos = targets == positive_class
    return ConfusionCounts(
        tp=int(np.sum(pred_pos & true_pos)),
        fp=int(np.sum(pred_pos & ~true_pos)),
        tn=int(np.sum(~pred_pos & ~true_pos)),
        fn=int(np.sum(~pred_pos & true_pos)),
    )


def accuracy(preds, targets) -> float:
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.size == 0:
        raise ValueError("cannot compute accuracy of an empty prediction set")
    if preds.shape != targets.shape:
        raise ValueError("predictions and targets must have equal length")
    return float(np.mean(preds == targets))


def precision_recall_f1(preds, targets, positive_class) -> tuple[float | None, float | None, float | None]:
    """Positive-class precision, recall and F1; None marks an undefined value."""
    c = confusion_counts(preds, targets, positive_class)
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else None
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else None
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def scalar_label_values(ds: GraphDataset) -> np.ndarray:
    """Per-node mapped labels: negative class -1, positive +1, unknown 0."""
    if ds.n_classes != 2:
        raise ValueError("scalar label mapping is defined for binary class sets")
    return np.where(ds.labels == 1, 1.0, np.where(ds.labels == 0, -1.0, 0.0))


def neighbor_label_average(ds: GraphDataset, adjacency: SparseMatrix | None = None) -> np.ndarray:
    """Mean mapped label over each node's neighbors (self excluded).

    Uses the raw adjacency without self-loops; isolated nodes get 0.
    """
    if adjacency is None:
        adjacency = ds.adjacency()
    mapped = scalar_label_values(ds)
    sums = spmm(adjacency, mapped[:, None])[:, 0]
    degree = np.diff(adjacency.row_offsets).astype(np.float64)
    out = np.zeros(ds.n)
    np.divide(sums, degree, out=out, where=degree > 0)
    return out


def label_average_histogram(
    ds: GraphDataset, bins: int = 41, adjacency: SparseMatrix | None = None
) -> list[tuple[float, int, int]]:
    """(bin_center, negative-class count, positive-class count) rows over
    the one-hop averaged labels, for the two labeled classes."""
    avg = neighbor_label_average(ds, adjacency)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    neg, _ = np.histogram(avg[ds.labels == 0], bins=edges)
    pos, _ = np.histogram(avg[ds.labels == 1], bins=edges)
    return [(float(c), int(a), int(b)) for c, a, b in zip(centers, neg, pos)]

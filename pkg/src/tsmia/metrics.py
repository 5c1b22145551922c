"""Empirical ROC analysis for attack score sets.

The curve is exact: every distinct score is a threshold and tied scores
cross a threshold together. TPR-at-FPR uses the step-function
convention (no interpolation), which is conservative at low FPR; the
FPR=0 operating point corresponds to a threshold strictly above the
highest non-member score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


class SingleClassError(MetricError):
    """ROC analysis needs both members and non-members."""


@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered by decreasing threshold, starting at the
    (0, 0) point (threshold +inf) and ending at (1, 1)."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    fp_counts: np.ndarray
    tp_counts: np.ndarray
    n_pos: int
    n_neg: int


def roc_curve(scores, labels) -> RocCurve:
    """Exact empirical ROC over all distinct score thresholds."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("roc: scores and labels must be matching 1-d arrays")
    if not np.all(np.isfinite(scores)):
        raise MetricError("roc: non-finite scores")
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("roc: need at least one member and one non-member")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(~sorted_labels)
    # last index of each tie group = the operating point where the whole
    # group has crossed the threshold
    distinct = np.flatnonzero(np.diff(sorted_scores, append=-np.inf) != 0)
    tp_counts = np.concatenate([[0], tp[distinct]])
    fp_counts = np.concatenate([[0], fp[distinct]])
    thresholds = np.concatenate([[np.inf], sorted_scores[distinct]])
    return RocCurve(
        thresholds=thresholds,
        fpr=fp_counts / n_neg,
        tpr=tp_counts / n_pos,
        fp_counts=fp_counts,
        tp_counts=tp_counts,
        n_pos=n_pos,
        n_neg=n_neg,
    )


def tpr_at_fpr(roc: RocCurve, fpr_target: float) -> float:
    """Max TPR over operating points with FPR <= target (step convention).

    Implemented on false-positive counts so the comparison is exact:
    a point qualifies iff fp_count <= floor(target * n_neg + 1e-9).
    """
    if fpr_target < 0:
        raise MetricError("tpr_at_fpr: target must be >= 0")
    allowed = int(np.floor(fpr_target * roc.n_neg + 1e-9))
    ok = roc.fp_counts <= allowed
    return float(roc.tpr[ok].max())


def auc(roc: RocCurve) -> float:
    """Trapezoidal area under the curve; equals the Mann-Whitney U
    statistic with half credit for ties."""
    widths = np.diff(roc.fpr)
    heights = (roc.tpr[1:] + roc.tpr[:-1]) / 2.0
    return float(np.sum(widths * heights))

"""Binary classification metrics with ASD (label 1) as the positive class."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import EvaluationError, ShapeError


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    sensitivity: float
    specificity: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def confusion(self):
        return self.tp, self.fp, self.tn, self.fn

    def as_dict(self):
        return {"accuracy": self.accuracy, "sensitivity": self.sensitivity,
                "specificity": self.specificity, "auc": self.auc}


METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "auc")


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if not np.isin(labels, (0, 1)).all():
        raise EvaluationError("labels must be 0/1")
    labels = labels.astype(np.int64)
    if labels.min(initial=1) == labels.max(initial=0):
        raise EvaluationError("both classes must be present")
    return scores, labels


def rank_auc(scores, labels):
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores, labels = _check(scores, labels)
    pos = labels == 1
    n_pos, n_neg = pos.sum(), (~pos).sum()
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion(scores, labels, threshold):
    pred = np.asarray(scores) > threshold
    labels = np.asarray(labels) == 1
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    tn = int(np.sum(~pred & ~labels))
    fn = int(np.sum(~pred & labels))
    return tp, fp, tn, fn


def compute_metrics(scores, labels, threshold):
    scores, labels = _check(scores, labels)
    tp, fp, tn, fn = confusion(scores, labels, threshold)
    return Metrics(accuracy=(tp + tn) / (tp + fp + tn + fn), sensitivity=tp / (tp + fn),
                   specificity=tn / (tn + fp), auc=rank_auc(scores, labels),
                   tp=tp, fp=fp, tn=tn, fn=fn)


def roc_points(scores, labels):
    """(FPR, TPR) pairs, one per distinct score threshold, from (0,0) to (1,1)."""
    scores, labels = _check(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tps = np.cumsum(y)
    fps = np.cumsum(1 - y)
    # keep the last index of each run of tied scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tpr = np.r_[0.0, tps[last] / tps[-1]]
    fpr = np.r_[0.0, fps[last] / fps[-1]]
    return np.column_stack([fpr, tpr])


def trapezoid_auc(points):
    points = np.asarray(points)
    return float(np.trapezoid(points[:, 1], points[:, 0]))

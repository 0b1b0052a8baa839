"""Evaluation metrics: ROC AUC, PR AUC (average precision), RMSE, MSE.

ROC AUC uses the rank formulation with half credit for ties, so it equals
P(score+ > score-) + P(tie)/2 exactly. PR AUC is average precision over the
descending-score step curve (no trapezoidal interpolation, which is biased in
precision-recall space).
"""

from __future__ import annotations

import numpy as np

from .errors import UndefinedMetricError, UsageError

__all__ = ["roc_auc", "pr_auc", "rmse", "mse"]


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise UsageError("scores and labels must be equal-length vectors")
    if scores.size == 0:
        raise UsageError("metrics of empty inputs are undefined")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise UndefinedMetricError("labels must be 0 or 1")
    return scores, labels


def _average_ranks(values):
    """1-based ranks; tied values share the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size)
    i = 0
    while i < values.size:
        j = i
        while j < values.size and sorted_vals[j] == sorted_vals[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def roc_auc(scores, labels):
    """Probability a positive outranks a negative, ties counted half."""
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes present")
    ranks = _average_ranks(scores)
    pos_rank_sum = ranks[labels == 1.0].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc(scores, labels):
    """Average precision: sum of precision * recall-increment over the
    descending sweep of distinct score thresholds."""
    scores, labels = _check_binary(scores, labels)
    n_pos = labels.sum()
    if n_pos == 0:
        raise UndefinedMetricError("PR AUC needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = 0.0
    taken = 0
    recall_prev = 0.0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        tp += y[i:j].sum()
        taken = j
        recall = tp / n_pos
        precision = tp / taken
        ap += (recall - recall_prev) * precision
        recall_prev = recall
        i = j
    return float(ap)


def mse(pred, y):
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape or pred.size == 0:
        raise UsageError("mse needs equal-length non-empty inputs")
    d = pred - y
    return float(np.mean(d * d))


def rmse(pred, y):
    return float(np.sqrt(mse(pred, y)))

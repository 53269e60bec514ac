"""
Ranking metrics for anchor classifiers.

Ties: AUROC gives half credit to tied positive/negative pairs; average
precision lets a group of tied scores enter the ranking together.
"""

import numpy as np
from scipy.stats import rankdata

from .exceptions import LabelError


def _check(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise LabelError("scores and labels differ in shape")
    return scores, labels == 1


def auroc(scores, labels):
    """Mann-Whitney estimate of P(score+ > score-) + P(tie) / 2."""
    scores, positive = _check(scores, labels)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise LabelError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels):
    """Sum of (R_k - R_{k-1}) * P_k over descending score groups."""
    scores, positive = _check(scores, labels)
    n_pos = int(positive.sum())
    if n_pos == 0:
        raise LabelError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    hits = np.cumsum(positive[order])
    # last index of every group of tied scores
    group_end = np.flatnonzero(np.r_[sorted_scores[1:] != sorted_scores[:-1], True])
    tp = hits[group_end]
    precision = tp / (group_end + 1)
    recall_step = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(recall_step * precision))


def summarize(scores, labels):
    return {"auroc": auroc(scores, labels), "auprc": average_precision(scores, labels)}

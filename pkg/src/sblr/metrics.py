"""Classification metrics."""

import numpy as np
from scipy.stats import rankdata

__all__ = ["accuracy", "auc"]


def accuracy(labels, predictions) -> float:
    labels, predictions = np.asarray(labels), np.asarray(predictions)
    if labels.shape != predictions.shape or labels.size == 0:
        raise ValueError("labels and predictions must be non-empty and of equal length")
    return float(np.mean(labels == predictions))


def auc(labels, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic; tied scores
    count one half. ``labels`` are +1 for positives, anything else negative."""
    labels, scores = np.asarray(labels), np.asarray(scores, dtype=np.float64)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))

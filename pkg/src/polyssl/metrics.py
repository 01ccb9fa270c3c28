"""Evaluation metrics: R2, RMSE, and area under the precision-recall curve."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateVariance, ShapeMismatch


def _paired(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1 or len(y) < 2:
        raise ShapeMismatch(f"need two equal 1-D arrays of length >= 2: {y.shape}, {y_hat.shape}")
    return y, y_hat


def r2(y, y_hat) -> float:
    y, y_hat = _paired(y, y_hat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateVariance("constant targets: R2 undefined")
    ss_res = float(np.sum((y - y_hat) ** 2))
    return 1.0 - ss_res / ss_tot


def rmse(y, y_hat) -> float:
    y, y_hat = _paired(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def auprc(y_true, scores) -> float:
    """Area under the precision-recall curve by step-wise integration.

    Walks the distinct score values as thresholds from high to low and
    accumulates precision * recall-increment, which equals the exhaustive
    all-thresholds enumeration.
    """
    y = np.asarray(y_true)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1 or len(y) < 1:
        raise ShapeMismatch(f"auprc: {y.shape} vs {s.shape}")
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        raise DegenerateVariance("no positive labels: AUPRC undefined")
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    s_sorted = s[order]
    area = 0.0
    tp = 0
    fp = 0
    prev_recall = 0.0
    i = 0
    n = len(y)
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            tp += int(y_sorted[j] == 1)
            fp += int(y_sorted[j] != 1)
            j += 1
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return area


def macro_auprc(y_true, score_matrix):
    """One-vs-rest AUPRC per class plus the macro average over present classes."""
    y = np.asarray(y_true)
    scores = np.asarray(score_matrix, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != len(y):
        raise ShapeMismatch(f"macro_auprc: {scores.shape} for {len(y)} labels")
    per_class = {}
    values = []
    for c in range(scores.shape[1]):
        mask = (y == c).astype(int)
        if mask.sum() == 0:
            per_class[c] = None
            continue
        value = auprc(mask, scores[:, c])
        per_class[c] = value
        values.append(value)
    if not values:
        raise DegenerateVariance("no class present in labels")
    return float(np.mean(values)), per_class

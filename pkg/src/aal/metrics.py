"""Evaluation metrics: top-k coverage, accuracy, RMSE and label-distribution KL."""

from __future__ import annotations

import numpy as np

KL_SMOOTHING = 1e-6


def top_k_ids(values, k: int) -> np.ndarray:
    """Indices of the ``k`` largest values; ties go to the smaller index."""
    values = np.asarray(values, dtype=np.float64)
    order = np.lexsort((np.arange(len(values)), -values))
    return order[:k]


def coverage_score(predictions, ground_truth, k: int = 1000) -> float:
    """Fraction of the true top-``k`` that also appears in the predicted top-``k``."""
    predictions = np.asarray(predictions, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if predictions.shape != ground_truth.shape or predictions.ndim != 1:
        raise ValueError(
            f"predictions and ground truth must be equal-length vectors, got {predictions.shape} "
            f"and {ground_truth.shape}"
        )
    if not 1 <= k <= len(predictions):
        raise ValueError(f"k={k} must lie in [1, {len(predictions)}]")
    hits = np.intersect1d(top_k_ids(predictions, k), top_k_ids(ground_truth, k), assume_unique=True)
    return len(hits) / k


def checkpoint_kl(hist_p, hist_q, eps: float = KL_SMOOTHING) -> float:
    """KL(P || Q) between two count histograms after additive smoothing."""
    p = np.asarray(hist_p, dtype=np.float64)
    q = np.asarray(hist_q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"histograms must have the same class count, got {p.shape} and {q.shape}")
    if p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("histograms must be nonempty")
    p = (p + eps) / (p + eps).sum()
    q = (q + eps) / (q + eps).sum()
    return float(max(np.sum(p * np.log(p / q)), 0.0))


def accuracy(predicted_labels, true_labels) -> float:
    a = np.asarray(predicted_labels)
    b = np.asarray(true_labels)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    if a.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(a == b))


def rmse(predicted, true) -> float:
    a = np.asarray(predicted, dtype=np.float64)
    b = np.asarray(true, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    if a.size == 0:
        raise ValueError("rmse of an empty set is undefined")
    return float(np.sqrt(np.mean((a - b) ** 2)))

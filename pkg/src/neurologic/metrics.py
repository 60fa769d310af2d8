"""Ranking average precision and its mean over activities."""
from __future__ import annotations

import math

import numpy as np


def average_precision(scores, labels) -> float:
    """Mean over positives of the precision at each positive's rank.

    Samples are ranked by descending score; equal scores keep input order,
    so callers pass samples in id order.  Raises ``ValueError`` without
    positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ")
    if not labels.any():
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    # fsum is correctly rounded, so the result does not depend on summation order
    return math.fsum((np.arange(1, len(ranks) + 1) / ranks).tolist()) / len(ranks)


def mean_ap(scores, labels) -> tuple[float, list[float | None]]:
    """mAP over activities (columns) with at least one positive.

    Returns the mean and the per-activity APs, ``None`` for skipped columns.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    per: list[float | None] = []
    for m in range(labels.shape[1]):
        col = scores[:, m]
        if not (labels[:, m] > 0).any() or np.isnan(col).any():
            per.append(None)
            continue
        per.append(average_precision(col, labels[:, m]))
    valid = [a for a in per if a is not None]
    return (float(np.mean(valid)) if valid else math.nan), per

"""Ranking metric, probability ensembling and the contrast-feature histogram.

AUROC is computed rank-based (Mann-Whitney) with average ranks for ties,
making it exactly the probability that a random positive outranks a random
negative, with ties counting one half.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties receiving the mean rank of their group."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    # group boundaries of equal scores in sorted order
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [scores.size]])
    group_rank = (starts + ends + 1) / 2.0  # mean of 1-based positions
    sizes = ends - starts
    ranks[order] = np.repeat(group_rank, sizes)
    return ranks


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DataError("scores and labels disagree in length")
    if not np.all(np.isfinite(scores)):
        raise DataError("scores must be finite")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC undefined: needs both classes")
    ranks = average_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ensemble(prob_lists: list[np.ndarray]) -> np.ndarray:
    """Per-example arithmetic mean of predicted probabilities."""
    if len(prob_lists) < 2:
        raise DataError("ensemble needs at least two probability lists")
    arrs = [np.asarray(p, dtype=np.float64) for p in prob_lists]
    n = arrs[0].size
    if any(a.size != n for a in arrs):
        raise DataError("ensemble inputs disagree in length")
    return np.mean(np.stack(arrs), axis=0)


def contrast_histogram(
    contrast: np.ndarray, labels: np.ndarray, bins: int = 50
) -> list[dict]:
    """Per-class binned counts of the contrast feature over shared bin edges.

    Returns rows of {class, bin_lo, bin_hi, count} ready for CSV emission.
    """
    contrast = np.asarray(contrast, dtype=np.float64)
    labels = np.asarray(labels)
    lo, hi = float(contrast.min()), float(contrast.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    rows = []
    for cls in (1, 0):
        counts, _ = np.histogram(contrast[labels == cls], bins=edges)
        label = "replied" if cls == 1 else "not_replied"
        for b in range(bins):
            rows.append(
                {
                    "class": label,
                    "bin_lo": float(edges[b]),
                    "bin_hi": float(edges[b + 1]),
                    "count": int(counts[b]),
                }
            )
    return rows


def histogram_csv(rows: list[dict]) -> str:
    lines = ["class,bin_lo,bin_hi,count"]
    for r in rows:
        lines.append(f"{r['class']},{r['bin_lo']!r},{r['bin_hi']!r},{r['count']}")
    return "\n".join(lines) + "\n"

"""ROC curves, AUROC, and score histograms.

AUROC uses the threshold sweep with the >= decision rule; ties contribute
half credit, so the trapezoidal area equals the Mann-Whitney statistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RocCurve:
    points: list[tuple[float, float]]  # (fpr, tpr), sorted by fpr, includes (0,0) and (1,1)
    auroc: float


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores and labels must be equal-length vectors, "
                         f"got {scores.shape} and {labels.shape}")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 (normal) or 1 (anomalous)")
    if labels.min() == labels.max():
        raise ValueError("both classes must be present to compute a ROC curve")
    return scores, labels.astype(int)


def roc_curve(scores, labels) -> RocCurve:
    """Sweep every distinct score as a threshold, descending."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    # keep only the last entry of each tied-score run: decisions use >= threshold
    last_of_run = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    points = [(0.0, 0.0)]
    for i in np.flatnonzero(last_of_run):
        points.append((fp[i] / n_neg, tp[i] / n_pos))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    area = float(np.trapezoid(ys, xs))
    return RocCurve(points, area)


def auroc(scores, labels) -> float:
    """Area under the ROC curve; equals P(pos > neg) + P(pos == neg)/2."""
    return roc_curve(scores, labels).auroc


def histogram(scores, bins: int, clip_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform bins on [min(scores), clip_max]; larger scores join the last bin.

    Returns (counts, edges) with len(edges) == bins + 1.
    """
    if bins < 1:
        raise ValueError("at least one bin is required")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot histogram zero scores")
    lo = float(scores.min())
    hi = float(clip_max)
    if hi <= lo:
        edges = np.linspace(lo, lo + 1.0, bins + 1)
        counts = np.zeros(bins, dtype=int)
        counts[-1] = scores.size
        return counts, edges
    width = (hi - lo) / bins
    # clip before the integer cast: a near-degenerate width can overflow to inf
    idx = np.clip(np.floor((scores - lo) / width), 0, bins - 1).astype(int)
    counts = np.bincount(idx, minlength=bins)
    return counts, np.linspace(lo, hi, bins + 1)


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr\n")
        for fpr, tpr in curve.points:
            fh.write(f"{fpr!r},{tpr!r}\n")


def write_hist_csv(path, counts: np.ndarray, edges: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for i, count in enumerate(counts):
            fh.write(f"{edges[i]!r},{edges[i + 1]!r},{int(count)}\n")

"""AUC and Spearman correlation, with the usual tie conventions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

DEFINED = "ok"
UNDEFINED = "undefined"


class UndefinedCorrelation(ValueError):
    """Spearman's rho is undefined because one series is constant."""


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count one half. Computed through the Mann-Whitney rank sum with
    average ranks, which equals the pairwise count exactly.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and of equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative instance")
    ranks = rankdata(scores, method="average")
    # rank sums are multiples of 1/2, so doubling keeps everything integral
    twice_u = 2.0 * ranks[pos].sum() - n_pos * (n_pos + 1)
    return float(twice_u / (2.0 * n_pos * n_neg))


def spearman(xs, ys) -> float:
    """Pearson correlation of average ranks.

    Raises :class:`UndefinedCorrelation` when either series is constant.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("spearman needs two 1-d series of equal length")
    if len(xs) < 3:
        raise ValueError("spearman needs at least 3 observations")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise UndefinedCorrelation("constant series")
    rx = rankdata(xs, method="average")
    ry = rankdata(ys, method="average")
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    rho = float(np.dot(dx, dy) / np.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))
    return min(1.0, max(-1.0, rho))


@dataclass
class CorrelationReport:
    metric: str
    k: int
    rho: float | None
    status: str
    points: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def n_epochs(self) -> int:
        return len(self.points)


def correlate_agreement_auc(epoch_records, metric: str, k: int) -> CorrelationReport:
    """Spearman's rho between mean agreement and AUC across epochs.

    ``epoch_records`` holds ``(epoch, auc, mean_agreement)`` triples. A
    constant series (FA at k=K, or a flat AUC profile) gives status
    ``"undefined"`` and no rho.
    """
    points = [(int(e), float(a), float(m)) for e, a, m in epoch_records]
    if len(points) < 3:
        raise ValueError(f"need at least 3 epochs to correlate, got {len(points)}")
    aucs = [p[1] for p in points]
    agreement = [p[2] for p in points]
    try:
        rho = spearman(agreement, aucs)
    except UndefinedCorrelation:
        return CorrelationReport(metric, k, None, UNDEFINED, points)
    return CorrelationReport(metric, k, rho, DEFINED, points)

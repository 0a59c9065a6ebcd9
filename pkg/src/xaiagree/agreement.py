"""Top-k feature agreement between pairs of explanations.

Features are ranked by descending absolute score with ties broken by
ascending feature index, so every ranking is total and deterministic. Four
metrics compare two top-k lists:

* FA  - fraction of features present in both lists
* SA  - ... that also carry the same sign
* RA  - ... that also sit at the same rank position
* SRA - ... that match in both sign and position

All four divide the count by k.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

FA, SA, RA, SRA = "FA", "SA", "RA", "SRA"
METRICS = (FA, SA, RA, SRA)


class AgreementError(ValueError):
    pass


@dataclass(frozen=True)
class TopKEntry:
    feature: int
    sign: int
    rank: int


@dataclass(frozen=True)
class TopK:
    entries: tuple[TopKEntry, ...]
    k: int

    @property
    def features(self) -> list[int]:
        return [e.feature for e in self.entries]


def _scores(attr) -> np.ndarray:
    return np.asarray(getattr(attr, "scores", attr), dtype=float)


def rank_positions(scores) -> np.ndarray:
    """0-based rank position of every feature, row-wise for a matrix."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    order = np.argsort(-np.abs(scores), axis=1, kind="stable")
    pos = np.empty_like(order)
    np.put_along_axis(pos, order, np.arange(scores.shape[1])[None, :], axis=1)
    return pos


def top_k(attr, k: int) -> TopK:
    scores = _scores(attr)
    K = len(scores)
    if not 1 <= k <= K:
        raise AgreementError(f"k={k} outside [1, {K}]")
    order = np.argsort(-np.abs(scores), kind="stable")[:k]
    entries = tuple(
        TopKEntry(int(f), int(np.sign(scores[f])), rank)
        for rank, f in enumerate(order, start=1)
    )
    return TopK(entries, k)


def _check_k(t1: TopK, t2: TopK) -> int:
    if t1.k != t2.k:
        raise AgreementError(f"mismatched k: {t1.k} vs {t2.k}")
    return t1.k


def _count(t1: TopK, t2: TopK, same_sign: bool, same_rank: bool) -> float:
    k = _check_k(t1, t2)
    other = {e.feature: e for e in t2.entries}
    hits = 0
    for e in t1.entries:
        o = other.get(e.feature)
        if o is None:
            continue
        if same_sign and o.sign != e.sign:
            continue
        if same_rank and o.rank != e.rank:
            continue
        hits += 1
    return hits / k


def feature_agreement(t1: TopK, t2: TopK) -> float:
    return _count(t1, t2, same_sign=False, same_rank=False)


def sign_agreement(t1: TopK, t2: TopK) -> float:
    return _count(t1, t2, same_sign=True, same_rank=False)


def rank_agreement(t1: TopK, t2: TopK) -> float:
    return _count(t1, t2, same_sign=False, same_rank=True)


def signed_rank_agreement(t1: TopK, t2: TopK) -> float:
    return _count(t1, t2, same_sign=True, same_rank=True)


METRIC_FUNCTIONS = {
    FA: feature_agreement,
    SA: sign_agreement,
    RA: rank_agreement,
    SRA: signed_rank_agreement,
}


def agreement(attr1, attr2, metric: str, k: int) -> float:
    return METRIC_FUNCTIONS[metric](top_k(attr1, k), top_k(attr2, k))


def agreement_batch(A, B, ks, metrics=METRICS) -> np.ndarray:
    """All metrics for row-paired score matrices.

    Returns an array of shape ``(len(metrics), len(ks), n_rows)``; it agrees
    exactly with the :class:`TopK` functions above.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != B.shape:
        raise AgreementError(f"shape mismatch {A.shape} vs {B.shape}")
    K = A.shape[1]
    pa, pb = rank_positions(A), rank_positions(B)
    same_sign = np.sign(A) == np.sign(B)
    same_rank = pa == pb
    out = np.empty((len(metrics), len(ks), A.shape[0]))
    for j, k in enumerate(ks):
        if not 1 <= k <= K:
            raise AgreementError(f"k={k} outside [1, {K}]")
        both = (pa < k) & (pb < k)
        masks = {
            FA: both,
            SA: both & same_sign,
            RA: both & same_rank,
            SRA: both & same_sign & same_rank,
        }
        for i, m in enumerate(metrics):
            out[i, j] = masks[m].sum(axis=1) / k
    return out


@dataclass
class AgreementGrid:
    """Per-instance agreement for every method pair at one epoch.

    ``values[metric, k, pair, instance]`` follows the order of ``metrics``,
    ``ks``, ``pairs`` and ``instance_ids``.
    """

    epoch: int
    methods: list[str]
    metrics: list[str]
    ks: list[int]
    pairs: list[tuple[str, str]]
    instance_ids: list[int]
    values: np.ndarray

    def pair_means(self, metric: str, k: int) -> np.ndarray:
        i, j = self.metrics.index(metric), self.ks.index(k)
        return self.values[i, j].mean(axis=1)

    def summary(self, metric: str, k: int) -> AgreementSummary:
        means = self.pair_means(metric, k)
        M = len(self.methods)
        matrix = np.eye(M)
        index = {m: n for n, m in enumerate(self.methods)}
        for (a, b), value in zip(self.pairs, means):
            matrix[index[a], index[b]] = matrix[index[b], index[a]] = value
        return AgreementSummary(metric, k, self.epoch, list(self.methods), matrix,
                                float(means.mean()))


@dataclass
class AgreementSummary:
    metric: str
    k: int
    epoch: int
    methods: list[str]
    pair_matrix: np.ndarray
    overall_mean: float


def _by_cell(attrs):
    cells, epochs = {}, set()
    for a in attrs:
        key = (a.instance_id, a.method)
        if key in cells:
            raise AgreementError(f"duplicate attribution for instance {key[0]}, {key[1]}")
        cells[key] = a
        epochs.add(a.epoch)
    if len(epochs) > 1:
        raise AgreementError(f"attributions span several epochs: {sorted(epochs)}")
    return cells, (epochs.pop() if epochs else 0)


def agreement_grid(attrs, methods=None, metrics=METRICS, ks=None) -> AgreementGrid:
    """Agreement of every unordered method pair on every instance of one epoch."""
    attrs = list(attrs)
    if not attrs:
        raise AgreementError("no attributions given")
    cells, epoch = _by_cell(attrs)
    if methods is None:
        methods = list(dict.fromkeys(a.method for a in attrs))
    methods = list(methods)
    if len(methods) < 2:
        raise AgreementError("agreement needs at least two methods (no pairs)")
    instance_ids = sorted({a.instance_id for a in attrs})
    missing = [(i, m) for i in instance_ids for m in methods if (i, m) not in cells]
    if missing:
        raise AgreementError(f"missing (instance, method) cells: {missing[:5]}")
    K = attrs[0].K
    ks = list(range(1, K + 1)) if ks is None else [int(k) for k in ks]
    pairs = list(combinations(methods, 2))
    score = {m: np.array([cells[(i, m)].scores for i in instance_ids]) for m in methods}
    values = np.stack(
        [agreement_batch(score[a], score[b], ks, metrics) for a, b in pairs], axis=2
    )
    return AgreementGrid(epoch, methods, list(metrics), ks, pairs, instance_ids, values)


def pairwise_summary(attrs, metric: str, k: int, methods=None) -> AgreementSummary:
    """Mean agreement per method pair over instances, and over pairs."""
    if metric not in METRICS:
        raise AgreementError(f"unknown metric {metric!r}")
    grid = agreement_grid(attrs, methods, [metric], [k])
    return grid.summary(metric, k)

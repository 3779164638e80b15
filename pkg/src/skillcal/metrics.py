"""Association diagnostics: AUC and Cramer's V.

Both statistics back the model-quality tables of a run report.  AUC is
computed as the Mann-Whitney rank statistic with the half-credit tie
convention, so it is invariant under strictly increasing score
transformations.  Cramer's V uses the plain chi-square statistic with
no continuity correction.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateTable, DimensionMismatch, OneClassOnly


def _rank_average_ties(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values sharing their average rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0], dtype=np.float64)
    sx = x[order]
    boundaries = np.flatnonzero(np.diff(sx) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [x.shape[0]]))
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + 1 + b)
    return ranks


def auc(y, scores) -> float:
    """Area under the ROC curve via the rank-sum identity.

    Ties between a positive and a negative score count one half, which
    matches enumeration over all positive/negative pairs:

        AUC = ( #{s+ > s-} + 0.5 #{s+ = s-} ) / (n+ n-)

    Raises
    ------
    OneClassOnly
        ``y`` has no positives or no negatives.
    DimensionMismatch
        Inputs differ in length.
    """
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise DimensionMismatch(f"y {y.shape} vs scores {s.shape}")
    n_pos = float(y.sum())
    n_neg = float(y.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUC needs both outcome classes")
    ranks = _rank_average_ties(s)
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_grouped(scores, positives, negatives) -> float:
    """AUC from grouped data: per group a score plus positive and
    negative counts.  Equals :func:`auc` on the expanded unit-level data
    (groups sharing a score contribute half credit to each other), but
    runs in O(groups log groups), which is what makes per-replicate AUC
    affordable when scores only take one value per covariate cell.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    if s.shape != pos.shape or s.shape != neg.shape or s.ndim != 1:
        raise DimensionMismatch("scores, positives, negatives must align")
    n_pos = pos.sum()
    n_neg = neg.sum()
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUC needs both outcome classes")
    order = np.argsort(s, kind="stable")
    s, pos, neg = s[order], pos[order], neg[order]
    boundaries = np.flatnonzero(np.diff(s) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.shape[0]]))
    won = 0.0
    cum_neg = 0.0
    for a, b in zip(starts, ends):
        p_here = pos[a:b].sum()
        n_here = neg[a:b].sum()
        won += p_here * (cum_neg + 0.5 * n_here)
        cum_neg += n_here
    return float(won / (n_pos * n_neg))


def cramers_v(a, b, categories_a=None, categories_b=None) -> float:
    """Cramer's V between two categorical vectors.

    V = sqrt( chi2 / (n * (min(r, c) - 1)) ), chi-square without
    continuity correction.  Category lists default to the distinct
    observed values; passing them explicitly lets a caller pin the
    table layout, and a declared category that never occurs makes the
    table degenerate.

    Raises
    ------
    DegenerateTable
        Either margin has fewer than two levels, or a declared category
        has a zero margin.
    DimensionMismatch
        Inputs differ in length.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"a {a.shape} vs b {b.shape}")
    cats_a = np.asarray(sorted(set(a))) if categories_a is None else np.asarray(categories_a)
    cats_b = np.asarray(sorted(set(b))) if categories_b is None else np.asarray(categories_b)
    r, c = cats_a.shape[0], cats_b.shape[0]
    if r < 2 or c < 2:
        raise DegenerateTable(f"table is {r}x{c}")
    ia = {v: i for i, v in enumerate(cats_a.tolist())}
    ib = {v: i for i, v in enumerate(cats_b.tolist())}
    table = np.zeros((r, c))
    for va, vb in zip(a.tolist(), b.tolist()):
        if va not in ia or vb not in ib:
            raise DegenerateTable(f"value pair ({va!r}, {vb!r}) outside categories")
        table[ia[va], ib[vb]] += 1.0
    n = table.sum()
    row = table.sum(axis=1)
    col = table.sum(axis=0)
    if (row == 0).any() or (col == 0).any():
        raise DegenerateTable("zero margin after tabulation")
    expected = np.outer(row, col) / n
    chi2 = float(((table - expected) ** 2 / expected).sum())
    return float(np.sqrt(chi2 / (n * (min(r, c) - 1))))

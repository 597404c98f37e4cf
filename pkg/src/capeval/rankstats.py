"""Tie-aware rank correlations and linear correlation.

Kendall statistics are computed from exact integer pair counts:

    tau_b = (C - D) / sqrt((C + D + Tx) * (C + D + Ty))
    tau_c = 2 * m * (C - D) / (n^2 * (m - 1)),  m = min(#distinct x, #distinct y)

where C/D are concordant/discordant pair counts and Tx/Ty count pairs tied
in x only / y only. Counting is O(n log n) (sort plus merge-sort inversion
counting); the O(n^2) definitional oracle lives in the test suite.

Undefined cases (constant columns, m < 2) raise UndefinedStatisticError
instead of returning NaN.
"""

from __future__ import annotations

import math

import numpy as np

from capeval.errors import DataError, UndefinedStatisticError

__all__ = ["kendall_tau_b", "kendall_tau_c", "spearman", "pearson"]


def _validate_xy(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise DataError("paired sample must be one-dimensional")
    if len(x) != len(y):
        raise DataError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise DataError("paired sample needs n >= 2")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DataError("paired sample contains NaN or infinity")
    return x, y


def _merge_count_inversions(values: list[float]) -> int:
    """Strict inversions (i < j with values[i] > values[j]), bottom-up merge sort."""
    a = list(values)
    n = len(a)
    buf = [0.0] * n
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    inversions += mid - i
                    buf[k] = a[j]
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            while i < mid:
                buf[k] = a[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = a[j]
                j += 1
                k += 1
        a, buf = buf, a
        width *= 2
    return inversions


def _tied_pairs(run_lengths: np.ndarray) -> int:
    return int(np.sum(run_lengths * (run_lengths - 1)) // 2)


def _run_lengths(sorted_equal_mask_breaks: np.ndarray, n: int) -> np.ndarray:
    """Run lengths from indices where a sorted sequence changes value."""
    starts = np.concatenate(([0], sorted_equal_mask_breaks + 1))
    ends = np.concatenate((sorted_equal_mask_breaks + 1, [n]))
    return ends - starts


def _concordance_counts(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int, int]:
    """Exact (C, D, Tx, Ty): concordant, discordant, tied-in-x-only, tied-in-y-only."""
    n = len(x)
    order = np.lexsort((y, x))
    xs = x[order]
    ys = y[order]

    x_breaks = np.flatnonzero(xs[1:] != xs[:-1])
    joint_breaks = np.flatnonzero((xs[1:] != xs[:-1]) | (ys[1:] != ys[:-1]))
    y_sorted = np.sort(y)
    y_breaks = np.flatnonzero(y_sorted[1:] != y_sorted[:-1])

    tied_x = _tied_pairs(_run_lengths(x_breaks, n))
    tied_both = _tied_pairs(_run_lengths(joint_breaks, n))
    tied_y = _tied_pairs(_run_lengths(y_breaks, n))

    # After sorting by (x, y), strict inversions in y are exactly the
    # discordant pairs: within an x run y is ascending, and equal-y pairs
    # are not counted.
    discordant = _merge_count_inversions(ys.tolist())

    total = n * (n - 1) // 2
    concordant = total - tied_x - tied_y + tied_both - discordant
    tx_only = tied_x - tied_both
    ty_only = tied_y - tied_both
    return concordant, discordant, tx_only, ty_only


def _distinct_count(v: np.ndarray) -> int:
    return int(len(np.unique(v)))


def kendall_tau_b(x, y) -> float:
    """Kendall rank correlation with the tau-b tie correction."""
    x, y = _validate_xy(x, y)
    if _distinct_count(x) < 2:
        raise UndefinedStatisticError("tau-b undefined: x is constant")
    if _distinct_count(y) < 2:
        raise UndefinedStatisticError("tau-b undefined: y is constant")
    c, d, tx, ty = _concordance_counts(x, y)
    return (c - d) / math.sqrt((c + d + tx) * (c + d + ty))


def kendall_tau_c(x, y) -> float:
    """Kendall rank correlation with the tau-c (Stuart) correction for
    unequal numbers of distinct values."""
    x, y = _validate_xy(x, y)
    m = min(_distinct_count(x), _distinct_count(y))
    if m < 2:
        raise UndefinedStatisticError("tau-c undefined: fewer than 2 distinct values")
    c, d, _, _ = _concordance_counts(x, y)
    n = len(x)
    return (2 * m * (c - d)) / (n * n * (m - 1))


def _average_ranks(v: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the average rank of their run."""
    n = len(v)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    breaks = np.flatnonzero(sv[1:] != sv[:-1])
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks + 1, [n]))
    ranks = np.empty(n, dtype=np.float64)
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0  # mean of ranks s+1 .. e
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of average-rank transforms."""
    x, y = _validate_xy(x, y)
    if _distinct_count(x) < 2:
        raise UndefinedStatisticError("spearman undefined: x is constant")
    if _distinct_count(y) < 2:
        raise UndefinedStatisticError("spearman undefined: y is constant")
    return pearson(_average_ranks(x), _average_ranks(y))


def pearson(x, y) -> float:
    """Product-moment correlation in float64."""
    x, y = _validate_xy(x, y)
    if np.all(x == x[0]):
        raise UndefinedStatisticError("pearson undefined: x is constant")
    if np.all(y == y[0]):
        raise UndefinedStatisticError("pearson undefined: y is constant")
    xc = x - x.mean()
    yc = y - y.mean()
    return float(np.dot(xc, yc) / math.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))

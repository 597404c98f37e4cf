"""Brute-force oracles used only by the test suite.

These stay deliberately independent of the library implementations: pair
counts by exhaustive enumeration, correlations from closed-form sums.
"""

import math


def pair_counts(x, y):
    """Exhaustive O(n^2) enumeration of (concordant, discordant, tied-x-only,
    tied-y-only, tied-both) pair counts."""
    n = len(x)
    c = d = tx = ty = tb = 0
    for i in range(n):
        for j in range(i + 1, n):
            x_equal = x[i] == x[j]
            y_equal = y[i] == y[j]
            if x_equal and y_equal:
                tb += 1
            elif x_equal:
                tx += 1
            elif y_equal:
                ty += 1
            else:
                same_direction = (x[i] < x[j]) == (y[i] < y[j])
                if same_direction:
                    c += 1
                else:
                    d += 1
    return c, d, tx, ty, tb


def tau_b(x, y):
    c, d, tx, ty, _ = pair_counts(x, y)
    return (c - d) / math.sqrt((c + d + tx) * (c + d + ty))


def tau_c(x, y):
    c, d, _, _, _ = pair_counts(x, y)
    n = len(x)
    m = min(len(set(x)), len(set(y)))
    return (2 * m * (c - d)) / (n * n * (m - 1))


def tau_a(x, y):
    """Definitional Kendall tau without tie corrections (tie-free data only)."""
    c, d, tx, ty, tb = pair_counts(x, y)
    assert tx == ty == tb == 0, "tau-a oracle requires tie-free data"
    n = len(x)
    return (c - d) / (n * (n - 1) / 2)


def pearson_closed_form(x, y):
    """(n*Sxy - Sx*Sy) / sqrt((n*Sxx - Sx^2) * (n*Syy - Sy^2))."""
    n = len(x)
    sx = sum(x)
    sy = sum(y)
    sxy = sum(a * b for a, b in zip(x, y))
    sxx = sum(a * a for a in x)
    syy = sum(b * b for b in y)
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


def spearman_no_ties(x, y):
    """1 - 6*sum(d^2)/(n*(n^2-1)); valid only when both columns are tie-free."""
    n = len(x)
    assert len(set(x)) == n and len(set(y)) == n, "oracle requires tie-free data"
    rank_x = {v: r for r, v in enumerate(sorted(x), start=1)}
    rank_y = {v: r for r, v in enumerate(sorted(y), start=1)}
    d2 = sum((rank_x[a] - rank_y[b]) ** 2 for a, b in zip(x, y))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))

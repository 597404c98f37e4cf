"""Greedy forward selection of metric sets by cross-validated R².

At each step the metric whose addition maximizes held-out R² of a linear
regression onto the human column joins the set, until every metric is in.
The whole procedure repeats over bootstrap resamples to show how stable the
early picks are.

Direct ols_fit calls are strict: rank deficiency is an error naming the
dependent columns. Inside selection the fit quietly falls back to a tiny
ridge penalty instead, because bootstrap resamples of real metric tables
are frequently near-collinear and one degenerate resample should not abort
a ten-bootstrap run.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from capeval.errors import DataError, UndefinedStatisticError
from capeval.store import MetricTable

__all__ = [
    "SelectionTrace",
    "BootstrapSelectionResult",
    "ols_fit",
    "cv_r2",
    "forward_select",
    "bootstrap_forward_select",
    "pick_histogram",
]

# Ridge term applied to standardized features when a selection-path fit is
# rank deficient. Small enough to be invisible on well-posed problems.
_RIDGE = 1e-8


@dataclass(frozen=True)
class SelectionTrace:
    order: tuple[str, ...]
    r2_path: tuple[float, ...]

    def __post_init__(self):
        if len(set(self.order)) != len(self.order):
            raise DataError("selection order contains duplicate metric names")
        if len(self.r2_path) != len(self.order):
            raise DataError("r2_path length must match selection order length")


@dataclass(frozen=True)
class BootstrapSelectionResult:
    traces: tuple[SelectionTrace, ...]
    first_pick_counts: dict[str, int]


def _as_design(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DataError(f"X must be 2-dimensional, got shape {X.shape}")
    if y.ndim != 1 or len(y) != X.shape[0]:
        raise DataError(f"y length {y.shape} does not match X rows {X.shape[0]}")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise DataError("non-finite values in regression inputs")
    return X, y


def _column_label(j: int, names) -> str:
    if j == 0:
        return "intercept"
    if names is not None:
        return names[j - 1]
    return f"column {j - 1}"


def _dependent_columns(A: np.ndarray, names) -> list[str]:
    """Columns that add no rank beyond the columns to their left."""
    labels = []
    rank = 0
    for j in range(A.shape[1]):
        new_rank = np.linalg.matrix_rank(A[:, : j + 1])
        if new_rank == rank:
            labels.append(_column_label(j, names))
        rank = new_rank
    return labels


def ols_fit(X, y, names=None) -> np.ndarray:
    """Least-squares coefficients [intercept, b_1, ..., b_p] via lstsq.

    Solved with an orthogonalization-based routine, never by forming the
    normal equations. Rank deficiency raises a DataError naming the
    dependent columns (use `names` to get metric names in the message).
    """
    X, y = _as_design(X, y)
    n, p = X.shape
    if n <= p + 1:
        raise DataError(f"need more rows than coefficients: n={n}, p+1={p + 1}")
    A = np.column_stack([np.ones(n), X])
    coefs, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < p + 1:
        dependent = _dependent_columns(A, names)
        raise DataError(f"rank-deficient design, dependent columns: {', '.join(dependent)}")
    return coefs


def _ridge_standardized(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Ridge fit on standardized features, returned in raw-feature coordinates."""
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    scale = np.where(sigma > 0, sigma, 1.0)
    Z = (X - mu) / scale
    Z[:, sigma == 0] = 0.0
    y_mean = y.mean()
    gram = Z.T @ Z + _RIDGE * np.eye(Z.shape[1])
    coef_z = np.linalg.solve(gram, Z.T @ (y - y_mean))
    beta = coef_z / scale
    beta[sigma == 0] = 0.0
    intercept = y_mean - float(mu @ beta)
    return np.concatenate([[intercept], beta])


def _fit_for_selection(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    A = np.column_stack([np.ones(len(y)), X])
    coefs, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < X.shape[1] + 1:
        return _ridge_standardized(X, y)
    return coefs


def cv_r2(X, y, folds: int = 5, *, seed: int) -> float:
    """Mean held-out R² over seeded contiguous folds of a shuffled index.

    Each fold's R² uses SStot about the held-out mean, so values can go
    negative when the fit is worse than predicting that mean.
    """
    X, y = _as_design(X, y)
    n = len(y)
    if folds < 2:
        raise DataError(f"folds must be >= 2, got {folds}")
    if n < folds:
        raise DataError(f"need at least as many rows as folds: n={n}, folds={folds}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    scores = []
    for i, held in enumerate(np.array_split(order, folds)):
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        coefs = _fit_for_selection(X[mask], y[mask])
        predicted = np.column_stack([np.ones(len(held)), X[held]]) @ coefs
        y_held = y[held]
        if np.all(y_held == y_held[0]):
            raise UndefinedStatisticError(f"fold {i} has a constant held-out target")
        ss_tot = float(((y_held - y_held.mean()) ** 2).sum())
        ss_res = float(((y_held - predicted) ** 2).sum())
        scores.append(1.0 - ss_res / ss_tot)
    return sum(scores) / folds


def forward_select(table: MetricTable, folds: int = 5, *, seed: int) -> SelectionTrace:
    """Grow the metric set greedily by cv_r2, ties broken by ascending name."""
    names = sorted(table.metrics)
    if len(names) < 2:
        raise DataError(f"forward selection needs at least 2 metrics, got {len(names)}")
    if len(table) < 2 * folds:
        raise DataError(f"need at least {2 * folds} rows for {folds}-fold selection")
    selected: list[str] = []
    path: list[float] = []
    remaining = list(names)
    while remaining:
        best_name = None
        best_r2 = -math.inf
        for name in remaining:  # ascending name order; strict > keeps the first on ties
            r2 = cv_r2(table.matrix(selected + [name]), table.human, folds, seed=seed)
            if r2 > best_r2:
                best_name, best_r2 = name, r2
        selected.append(best_name)
        remaining.remove(best_name)
        path.append(best_r2)
    return SelectionTrace(order=tuple(selected), r2_path=tuple(path))


def _resample_with_replacement(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def bootstrap_forward_select(
    table: MetricTable,
    folds: int = 5,
    bootstraps: int = 10,
    *,
    seed: int,
    resample=_resample_with_replacement,
    workers: int = 1,
) -> BootstrapSelectionResult:
    """Run forward_select on `bootstraps` row resamples, seeds seed+b.

    `resample(rng, n) -> index array` exists so tests can substitute the
    identity; the default draws n rows with replacement. Each bootstrap is
    seeded by its index, so `workers` never changes the result.
    """
    if bootstraps < 1:
        raise DataError(f"bootstraps must be >= 1, got {bootstraps}")

    def one_bootstrap(b: int) -> SelectionTrace:
        rng = np.random.default_rng(seed + b)
        idx = np.asarray(resample(rng, len(table)))
        sub = MetricTable(
            instance_ids=[table.instance_ids[i] for i in idx],
            human=table.human[idx],
            metrics={name: col[idx] for name, col in table.metrics.items()},
        )
        return forward_select(sub, folds, seed=seed + b)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one_bootstrap, range(bootstraps)))
    else:
        traces = [one_bootstrap(b) for b in range(bootstraps)]
    first = Counter(trace.order[0] for trace in traces)
    return BootstrapSelectionResult(traces=tuple(traces), first_pick_counts=dict(first))


def pick_histogram(traces, position: int) -> dict[str, int]:
    """How often each metric lands at the given selection position (0-based)."""
    counts = Counter(t.order[position] for t in traces if position < len(t.order))
    return dict(counts)

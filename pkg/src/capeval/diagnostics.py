"""Statistical-power simulation and raw-similarity distribution checks.

The power simulation quantifies how much repeated evaluation inflates
correlations: a "metric" of pure uniform noise is drawn several times
against fixed per-system human scores and only the best-correlating draw
is kept. The similarity side histograms raw (unclamped, unweighted)
cosines so the score-rescaling constant can be sanity-checked against the
observed range.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from capeval.errors import DataError, UndefinedStatisticError
from capeval.rankstats import pearson, spearman
from capeval.scoring import _missing_ids, cosine
from capeval.store import CaptionCorpus, EmbeddingStore, reference_key

__all__ = [
    "PowerSimConfig",
    "PowerSimResult",
    "SimilaritySummary",
    "SimilarityHistogram",
    "SimilarityReport",
    "power_simulation",
    "similarity_distributions",
    "rescale_stats",
]

QUANTILE_POINTS = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)


@dataclass(frozen=True)
class PowerSimConfig:
    n_systems: int = 12
    trials_per_metric: int = 10
    simulations: int = 1000
    seed: int = 0
    # Rank statistics only see the ordering of these, so evenly spaced
    # defaults are as good as any; product-moment results do depend on them.
    human_scores: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n_systems < 3:
            raise DataError(f"n_systems must be >= 3, got {self.n_systems}")
        if self.trials_per_metric < 1:
            raise DataError(f"trials_per_metric must be >= 1, got {self.trials_per_metric}")
        if self.simulations < 1:
            raise DataError(f"simulations must be >= 1, got {self.simulations}")
        scores = self.human_scores or tuple(
            i / (self.n_systems - 1) for i in range(self.n_systems)
        )
        if len(scores) != self.n_systems:
            raise DataError(
                f"human_scores length {len(scores)} != n_systems {self.n_systems}"
            )
        if len(set(scores)) == 1:
            raise UndefinedStatisticError("human_scores are constant")
        object.__setattr__(self, "human_scores", tuple(float(s) for s in scores))


@dataclass(frozen=True)
class PowerSimResult:
    mean_best_spearman: float
    mean_best_pearson: float
    mean_single_spearman: float
    mean_single_pearson: float


def _simulate_once(cfg: PowerSimConfig, sim: int, human: list) -> tuple:
    rng = np.random.default_rng(cfg.seed + sim)
    draws = rng.random((cfg.trials_per_metric, cfg.n_systems))
    s_vals = [spearman(row, human) for row in draws]
    p_vals = [pearson(row, human) for row in draws]
    return max(s_vals), max(p_vals), s_vals[0], p_vals[0]


def power_simulation(cfg: PowerSimConfig, workers: int = 1) -> PowerSimResult:
    """Mean best-of-N and single-run correlations of noise metrics.

    Per simulation s, a generator seeded with (seed + s) draws
    trials_per_metric score vectors uniform on [0, 1). "Best" is taken per
    statistic (max spearman for the spearman column, max pearson for
    pearson); the single-run baseline is the first draw. Seeding per
    simulation makes the result independent of execution order (and of
    `workers`) and makes best-of-N monotone in N for a fixed seed.
    """
    human = list(cfg.human_scores)
    sims = range(cfg.simulations)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda s: _simulate_once(cfg, s, human), sims))
    else:
        rows = [_simulate_once(cfg, s, human) for s in sims]
    best_s, best_p, single_s, single_p = (np.array(col) for col in zip(*rows))
    return PowerSimResult(
        mean_best_spearman=float(best_s.mean()),
        mean_best_pearson=float(best_p.mean()),
        mean_single_spearman=float(single_s.mean()),
        mean_single_pearson=float(single_p.mean()),
    )


@dataclass(frozen=True)
class SimilaritySummary:
    count: int
    minimum: float
    maximum: float
    mean: float
    quantiles: dict[float, float]


@dataclass(frozen=True)
class SimilarityHistogram:
    kind: str  # "candidate-image" or "candidate-reference"
    bin_edges: np.ndarray
    counts: np.ndarray
    negative_count: int
    summary: SimilaritySummary | None

    def __post_init__(self):
        if len(self.counts) != len(self.bin_edges) - 1:
            raise DataError("counts length must be bin_edges length - 1")
        if not np.all(np.diff(self.bin_edges) > 0):
            raise DataError("bin_edges must be strictly increasing")


@dataclass(frozen=True)
class SimilarityReport:
    candidate_image: SimilarityHistogram
    candidate_reference: SimilarityHistogram
    # Raw cosines kept so downstream rescaling checks need not re-walk stores.
    image_values: tuple[float, ...]
    reference_values: tuple[float, ...]


def _histogram(kind: str, values: list[float], bins: int) -> SimilarityHistogram:
    # Fixed edges keep histograms comparable across corpora; the top edge
    # sits just past 1.0 so exact-1 cosines land in the last bin.
    edges = np.linspace(-1.0, 1.0001, bins + 1)
    arr = np.asarray(values, dtype=float)
    counts, _ = np.histogram(arr, bins=edges)
    if len(arr) == 0:
        summary = None
    else:
        summary = SimilaritySummary(
            count=len(arr),
            minimum=float(arr.min()),
            maximum=float(arr.max()),
            mean=float(arr.mean()),
            quantiles={q: float(np.quantile(arr, q)) for q in QUANTILE_POINTS},
        )
    return SimilarityHistogram(
        kind=kind,
        bin_edges=edges,
        counts=counts,
        negative_count=int((arr < 0).sum()),
        summary=summary,
    )


def similarity_distributions(
    candidate_embeds: EmbeddingStore,
    image_embeds: EmbeddingStore,
    reference_embeds: EmbeddingStore | None,
    corpus: CaptionCorpus,
    bins: int = 50,
) -> SimilarityReport:
    """Histograms of raw cosines for (candidate, image) and (candidate, reference).

    No clamping and no weighting: this is the evidence view behind the
    score-rescaling constant. The candidate-reference histogram is empty
    (summary None) when no references are given.
    """
    if len(corpus) == 0:
        raise DataError("cannot analyze an empty corpus")
    if bins < 1:
        raise DataError(f"bins must be >= 1, got {bins}")
    missing = _missing_ids(corpus, candidate_embeds, image_embeds, reference_embeds)
    if missing:
        raise DataError("missing embedding ids: " + ", ".join(missing))
    image_cosines = []
    reference_cosines = []
    for item in corpus:
        cand = candidate_embeds[item.candidate_id]
        image_cosines.append(cosine(cand, image_embeds[item.image_id]))
        if reference_embeds is not None:
            for text in item.references:
                ref = reference_embeds[reference_key(text)]
                reference_cosines.append(cosine(cand, ref))
    return SimilarityReport(
        candidate_image=_histogram("candidate-image", image_cosines, bins),
        candidate_reference=_histogram("candidate-reference", reference_cosines, bins),
        image_values=tuple(image_cosines),
        reference_values=tuple(reference_cosines),
    )


def rescale_stats(values, w: float) -> dict:
    """How w * max(cos, 0) maps the observed cosines onto [0, 1].

    Returns the raw and rescaled ranges plus how many rescaled values
    overflow 1.0; a well-chosen w stretches the bulk of the distribution
    across [0, 1] with few overflows.
    """
    if len(values) == 0:
        raise DataError("no similarity values to rescale")
    if not (w > 0) or not np.isfinite(w):
        raise DataError(f"w must be a positive finite number, got {w}")
    arr = np.asarray(values, dtype=float)
    rescaled = w * np.clip(arr, 0.0, None)
    return {
        "w": float(w),
        "count": len(arr),
        "raw_min": float(arr.min()),
        "raw_max": float(arr.max()),
        "raw_mean": float(arr.mean()),
        "negative_count": int((arr < 0).sum()),
        "rescaled_min": float(rescaled.min()),
        "rescaled_max": float(rescaled.max()),
        "rescaled_mean": float(rescaled.mean()),
        "overflow_count": int((rescaled > 1.0).sum()),
    }

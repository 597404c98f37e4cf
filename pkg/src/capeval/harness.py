"""Evaluation protocols: caption-level Likert correlation, pairwise
preference accuracy, FOIL-style paired detection, and system-level
correlation.

Two Likert aggregations are supported because the choice materially moves
reported correlations: "flatten" expands every individual human rating into
one long list (each candidate's score repeated once per rating), "mean"
correlates against per-pair mean ratings. Pairwise protocols define
correctness only when one side holds a majority; majority ties are dropped
from the denominator and counted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from capeval.errors import DataError, LoadError, UndefinedStatisticError
from capeval.rankstats import kendall_tau_b, kendall_tau_c, pearson, spearman
from capeval.store import JudgmentSet

__all__ = [
    "AGGREGATION_FLATTEN",
    "AGGREGATION_MEAN",
    "LikertProtocolConfig",
    "TiePolicy",
    "ScoredVotePair",
    "FoilPair",
    "SystemSummary",
    "PairwiseResult",
    "ResampledEvalResult",
    "SystemCorrelations",
    "likert_correlation",
    "pairwise_accuracy",
    "foil_accuracy",
    "resampled_reference_eval",
    "system_level_correlation",
    "load_system_summaries",
]

AGGREGATION_FLATTEN = "flatten"
AGGREGATION_MEAN = "mean"
_STATISTICS = {"tau-b": kendall_tau_b, "tau-c": kendall_tau_c}

# Default seed for random tie-breaking; fixed so that protocol runs are
# reproducible unless the caller opts into a different seed.
DEFAULT_TIE_SEED = 20210707


@dataclass(frozen=True)
class LikertProtocolConfig:
    aggregation: str = AGGREGATION_FLATTEN
    statistic: str = "tau-c"

    def __post_init__(self):
        if self.aggregation not in (AGGREGATION_FLATTEN, AGGREGATION_MEAN):
            raise DataError(
                f"aggregation must be 'flatten' or 'mean', got {self.aggregation!r}"
            )
        if self.statistic not in _STATISTICS:
            raise DataError(f"statistic must be one of {sorted(_STATISTICS)}")


@dataclass(frozen=True)
class TiePolicy:
    """How equal scores are credited: a seeded coin flip or flat half credit."""

    mode: str = "seeded-random"
    seed: int | None = DEFAULT_TIE_SEED

    def __post_init__(self):
        if self.mode not in ("seeded-random", "half-credit"):
            raise DataError(f"tie policy must be seeded-random or half-credit, got {self.mode!r}")
        if self.mode == "seeded-random" and self.seed is None:
            raise DataError("seeded-random tie policy requires an explicit seed")

    @classmethod
    def half_credit(cls) -> "TiePolicy":
        return cls(mode="half-credit", seed=None)


@dataclass(frozen=True)
class ScoredVotePair:
    score_a: float
    score_b: float
    votes_a: int
    votes_b: int


@dataclass(frozen=True)
class FoilPair:
    true_score: float
    foil_score: float


@dataclass(frozen=True)
class SystemSummary:
    system_id: str
    metric_mean: float
    human_m1: float
    human_m2: float


@dataclass(frozen=True)
class PairwiseResult:
    accuracy: float
    n_input: int
    n_scored: int
    n_majority_ties_dropped: int
    n_score_ties: int


@dataclass(frozen=True)
class ResampledEvalResult:
    mean_accuracy: float
    per_draw: tuple[PairwiseResult, ...]


@dataclass(frozen=True)
class SystemCorrelations:
    spearman_m1: float
    spearman_m2: float
    pearson_m1: float
    pearson_m2: float


def likert_correlation(
    scores: dict[tuple[str, str], float],
    judgments: JudgmentSet,
    cfg: LikertProtocolConfig = LikertProtocolConfig(),
) -> float:
    """Rank correlation between metric scores and human Likert ratings.

    "flatten" repeats each score once per individual rating before
    correlating; "mean" correlates against the per-pair mean rating. The
    two agree exactly when every pair's ratings are unanimous and can
    diverge substantially otherwise.
    """
    if not judgments.likert:
        raise DataError("no likert judgments supplied")
    metric_column: list[float] = []
    human_column: list[float] = []
    for key, ratings in judgments.likert.items():
        if key not in scores:
            raise DataError(f"no score for judged pair {key}")
        score = scores[key]
        if cfg.aggregation == AGGREGATION_FLATTEN:
            metric_column.extend([score] * len(ratings))
            human_column.extend(ratings)
        else:
            metric_column.append(score)
            human_column.append(sum(ratings) / len(ratings))
    statistic = _STATISTICS[cfg.statistic]
    return statistic(metric_column, human_column)


def pairwise_accuracy(
    pairs: list[ScoredVotePair], tie_policy: TiePolicy = TiePolicy()
) -> PairwiseResult:
    """Fraction of majority-preferred captions that get the strictly higher score.

    Pairs without a vote majority carry no correctness signal; they are
    excluded from the denominator and reported. Score ties earn a seeded
    coin flip or half credit depending on the policy.
    """
    if not pairs:
        raise DataError("pairwise_accuracy needs at least one pair")
    rng = np.random.default_rng(tie_policy.seed) if tie_policy.mode == "seeded-random" else None
    scored = 0
    credit = 0.0
    score_ties = 0
    for pair in pairs:
        if pair.votes_a == pair.votes_b:
            continue
        scored += 1
        if pair.votes_a > pair.votes_b:
            preferred, other = pair.score_a, pair.score_b
        else:
            preferred, other = pair.score_b, pair.score_a
        if preferred > other:
            credit += 1.0
        elif preferred == other:
            score_ties += 1
            if rng is not None:
                credit += 1.0 if rng.random() < 0.5 else 0.0
            else:
                credit += 0.5
    if scored == 0:
        raise DataError("no pairs with a vote majority remain")
    return PairwiseResult(
        accuracy=credit / scored,
        n_input=len(pairs),
        n_scored=scored,
        n_majority_ties_dropped=len(pairs) - scored,
        n_score_ties=score_ties,
    )


def foil_accuracy(pairs: list[FoilPair], tie_policy: TiePolicy = TiePolicy()) -> PairwiseResult:
    """Fraction of (true, corrupted) caption pairs where the true one scores higher.

    Chance is 0.5; ties follow the policy. Reuses the pairwise machinery
    with the true caption as the unanimous majority side.
    """
    if not pairs:
        raise DataError("foil_accuracy needs at least one pair")
    as_votes = [
        ScoredVotePair(score_a=p.true_score, score_b=p.foil_score, votes_a=1, votes_b=0)
        for p in pairs
    ]
    return pairwise_accuracy(as_votes, tie_policy)


def resampled_reference_eval(
    judgments: JudgmentSet,
    reference_pool: dict[str, list[str]],
    scorer,
    *,
    k: int = 5,
    draws: int = 5,
    seed: int,
    tie_policy: TiePolicy = TiePolicy(),
) -> ResampledEvalResult:
    """Pairwise accuracy averaged over seeded redraws of k references per image.

    For each draw d, references are sampled without replacement with seed
    (seed + d), every judged candidate is scored by
    scorer(image_id, candidate_id, sampled_reference_ids), and pairwise
    accuracy is computed. A reference-free scorer simply ignores its third
    argument and yields identical draws.
    """
    if draws < 1:
        raise DataError("draws must be >= 1")
    if k < 1:
        raise DataError("k must be >= 1")
    if not judgments.pairwise:
        raise DataError("no pairwise judgments supplied")
    needed_images = sorted({j.image_id for j in judgments.pairwise})
    for image_id in needed_images:
        pool = reference_pool.get(image_id, [])
        if len(pool) < k:
            raise DataError(
                f"reference pool for image {image_id!r} has {len(pool)} entries, need {k}"
            )
    per_draw = []
    for draw in range(draws):
        rng = np.random.default_rng(seed + draw)
        sampled = {}
        for image_id in needed_images:
            pool = reference_pool[image_id]
            chosen = rng.choice(len(pool), size=k, replace=False)
            sampled[image_id] = [pool[i] for i in chosen]
        pairs = [
            ScoredVotePair(
                score_a=scorer(j.image_id, j.candidate_a_id, sampled[j.image_id]),
                score_b=scorer(j.image_id, j.candidate_b_id, sampled[j.image_id]),
                votes_a=j.votes_a,
                votes_b=j.votes_b,
            )
            for j in judgments.pairwise
        ]
        per_draw.append(pairwise_accuracy(pairs, tie_policy))
    mean_accuracy = sum(r.accuracy for r in per_draw) / draws
    return ResampledEvalResult(mean_accuracy=mean_accuracy, per_draw=tuple(per_draw))


def load_system_summaries(path) -> list[SystemSummary]:
    """systems.csv: header system_id,metric_mean,human_m1,human_m2."""
    expected = ["system_id", "metric_mean", "human_m1", "human_m2"]
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError("empty system summary file", str(path), 1) from None
        if header != expected:
            raise LoadError(f"header must be {','.join(expected)}", str(path), 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise LoadError(f"ragged row: {len(row)} fields, expected 4", str(path), lineno)
            try:
                rows.append(
                    SystemSummary(row[0], float(row[1]), float(row[2]), float(row[3]))
                )
            except ValueError:
                raise LoadError("non-numeric cell", str(path), lineno) from None
    if not rows:
        raise LoadError("system summary file has no rows", str(path), 1)
    return rows


def system_level_correlation(summaries: list[SystemSummary]) -> SystemCorrelations:
    """Correlate per-system metric means against the two human system measures."""
    if len(summaries) < 3:
        raise DataError("system-level correlation needs at least 3 systems")
    ids = [s.system_id for s in summaries]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate system_id rows")
    metric = [s.metric_mean for s in summaries]
    m1 = [s.human_m1 for s in summaries]
    m2 = [s.human_m2 for s in summaries]
    return SystemCorrelations(
        spearman_m1=spearman(metric, m1),
        spearman_m2=spearman(metric, m2),
        pearson_m1=pearson(metric, m1),
        pearson_m2=pearson(metric, m2),
    )

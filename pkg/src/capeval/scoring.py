"""CLIP-S / RefCLIP-S scoring over precomputed embeddings.

    CLIP-S(c, v)       = w * max(cos(c, v), 0)                  (default w = 2.5)
    RefCLIP-S(c, R, v) = H-Mean(CLIP-S(c, v), max(max_r cos(c, r), 0))

with H-Mean(x, y) = 2xy/(x+y), defined as 0 when either argument is 0.
The w weighting applies to the image term only; with w = 2.5 the score
roughly spans [0, 1] on this encoder family but can exceed 1.

Embeddings are opaque unit vectors here; any prompt prefixing happened
before they were written. Corpus-level scores are the arithmetic mean over
(candidate, image) pairs, accumulated in float64 in input order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from capeval.errors import DataError
from capeval.store import CaptionCorpus, Embedding, EmbeddingStore, reference_key

__all__ = [
    "ScoreConfig",
    "ScoredPair",
    "CorpusScores",
    "cosine",
    "clip_score",
    "ref_clip_score",
    "harmonic_mean",
    "corpus_scores",
    "write_scores_jsonl",
    "read_scores_jsonl",
]


@dataclass(frozen=True)
class ScoreConfig:
    w: float = 2.5
    clamp_negative: bool = True

    def __post_init__(self):
        if not (self.w > 0 and math.isfinite(self.w)):
            raise DataError(f"w must be a positive real, got {self.w}")


DEFAULT_CONFIG = ScoreConfig()


@dataclass(frozen=True)
class ScoredPair:
    image_id: str
    candidate_id: str
    clip_s: float
    raw_cos_image: float
    ref_clip_s: float | None = None
    raw_max_ref_cos: float | None = None


@dataclass(frozen=True)
class CorpusScores:
    pairs: tuple[ScoredPair, ...]
    corpus_clip_s: float
    corpus_ref_clip_s: float | None


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity of two unit-normalized embeddings (their dot product)."""
    if a.values.shape != b.values.shape:
        raise DataError(
            f"dimension mismatch: {a.values.shape[0]} vs {b.values.shape[0]}"
        )
    return float(np.dot(a.values, b.values))


def clip_score(candidate: Embedding, image: Embedding, cfg: ScoreConfig = DEFAULT_CONFIG) -> float:
    """w * max(cos(candidate, image), 0); the clamp is skipped if cfg disables it."""
    cos = cosine(candidate, image)
    if cfg.clamp_negative:
        cos = max(cos, 0.0)
    return cfg.w * cos


def harmonic_mean(x: float, y: float) -> float:
    """2xy/(x+y), extended continuously with H(x, 0) = H(0, y) = 0.

    Arguments must be nonnegative (the harmonic mean is undefined for
    negative values, which is why raw cosines are clamped first).
    """
    if x < 0 or y < 0:
        raise DataError(f"harmonic mean undefined for negative values: {x}, {y}")
    if x == 0.0 or y == 0.0:
        return 0.0
    if x == y:
        return x  # keeps H(x, x) == x exact instead of rounding through 2x^2/2x
    return 2.0 * x * y / (x + y)


def ref_clip_score(
    candidate: Embedding,
    references: list[Embedding],
    image: Embedding,
    cfg: ScoreConfig = DEFAULT_CONFIG,
) -> float:
    """Harmonic mean of CLIP-S and the clamped maximal reference cosine.

    Both harmonic-mean arguments are floored at zero regardless of
    cfg.clamp_negative; only the image-side term carries the w weighting.
    """
    if not references:
        raise DataError("ref_clip_score requires at least one reference embedding")
    image_term = cfg.w * max(cosine(candidate, image), 0.0)
    ref_term = max(max(cosine(candidate, r) for r in references), 0.0)
    return harmonic_mean(image_term, ref_term)


def _missing_ids(corpus, candidate_embeds, image_embeds, reference_embeds):
    missing = []
    for item in corpus:
        if item.candidate_id not in candidate_embeds:
            missing.append(f"candidate:{item.candidate_id}")
        if item.image_id not in image_embeds:
            missing.append(f"image:{item.image_id}")
        if reference_embeds is not None:
            for text in item.references:
                key = reference_key(text)
                if key not in reference_embeds:
                    missing.append(f"reference:{key} ({text[:40]!r})")
    return missing


def corpus_scores(
    corpus: CaptionCorpus,
    candidate_embeds: EmbeddingStore,
    image_embeds: EmbeddingStore,
    reference_embeds: EmbeddingStore | None = None,
    cfg: ScoreConfig = DEFAULT_CONFIG,
) -> CorpusScores:
    """Score every corpus item; corpus means are in input order.

    The reference-augmented corpus mean is reported only when a reference
    store is supplied and every item has at least one reference; a partial
    average would silently corrupt comparisons.
    """
    if len(corpus) == 0:
        raise DataError("cannot score an empty corpus")
    missing = _missing_ids(corpus, candidate_embeds, image_embeds, reference_embeds)
    if missing:
        raise DataError("missing embedding ids: " + ", ".join(missing))

    pairs = []
    clip_sum = 0.0
    ref_sum = 0.0
    all_have_refs = reference_embeds is not None
    for item in corpus:
        cand = candidate_embeds[item.candidate_id]
        img = image_embeds[item.image_id]
        raw_cos = cosine(cand, img)
        cs = cfg.w * max(raw_cos, 0.0) if cfg.clamp_negative else cfg.w * raw_cos
        ref_cs = None
        raw_max_ref = None
        if reference_embeds is not None and item.references:
            refs = [reference_embeds[reference_key(t)] for t in item.references]
            raw_max_ref = max(cosine(cand, r) for r in refs)
            ref_cs = harmonic_mean(cfg.w * max(raw_cos, 0.0), max(raw_max_ref, 0.0))
        else:
            all_have_refs = False
        pairs.append(
            ScoredPair(
                image_id=item.image_id,
                candidate_id=item.candidate_id,
                clip_s=cs,
                raw_cos_image=raw_cos,
                ref_clip_s=ref_cs,
                raw_max_ref_cos=raw_max_ref,
            )
        )
        clip_sum += cs
        if ref_cs is not None:
            ref_sum += ref_cs

    n = len(pairs)
    return CorpusScores(
        pairs=tuple(pairs),
        corpus_clip_s=clip_sum / n,
        corpus_ref_clip_s=(ref_sum / n) if all_have_refs else None,
    )


def write_scores_jsonl(result: CorpusScores, cfg: ScoreConfig, path) -> None:
    """One ScoredPair object per line plus a trailing corpus summary line."""
    with open(path, "w", encoding="utf-8") as fh:
        for pair in result.pairs:
            fh.write(
                json.dumps(
                    {
                        "image_id": pair.image_id,
                        "candidate_id": pair.candidate_id,
                        "clip_s": pair.clip_s,
                        "ref_clip_s": pair.ref_clip_s,
                        "raw_cos_image": pair.raw_cos_image,
                        "raw_max_ref_cos": pair.raw_max_ref_cos,
                    }
                )
                + "\n"
            )
        fh.write(
            json.dumps(
                {
                    "corpus_clip_s": result.corpus_clip_s,
                    "corpus_ref_clip_s": result.corpus_ref_clip_s,
                    "w": cfg.w,
                    "n": len(result.pairs),
                }
            )
            + "\n"
        )


def read_scores_jsonl(path) -> tuple[list[ScoredPair], dict]:
    """Parse a scores file back into pairs plus the summary record."""
    pairs: list[ScoredPair] = []
    summary = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if "corpus_clip_s" in record:
                summary = record
                continue
            try:
                pairs.append(
                    ScoredPair(
                        image_id=record["image_id"],
                        candidate_id=record["candidate_id"],
                        clip_s=record["clip_s"],
                        raw_cos_image=record["raw_cos_image"],
                        ref_clip_s=record.get("ref_clip_s"),
                        raw_max_ref_cos=record.get("raw_max_ref_cos"),
                    )
                )
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from None
    if summary is None or "w" not in summary:
        raise DataError(f"{path}: missing or incomplete corpus summary line")
    return pairs, summary

"""Command-line entry point: every evaluation protocol as a subcommand.

Each run writes its report plus a manifest recording the subcommand, the
full effective configuration, sha256 digests of every consumed file, and
the tool version. Manifests carry no timestamps, so re-running with the
same inputs and flags yields byte-identical artifacts.

Exit codes: 0 success, 2 input/format error, 3 statistic undefined on the
given data, 64 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from capeval import __version__
from capeval.diagnostics import (
    PowerSimConfig,
    power_simulation,
    rescale_stats,
    similarity_distributions,
)
from capeval.errors import CapevalError, DataError, UndefinedStatisticError
from capeval.harness import (
    DEFAULT_TIE_SEED,
    FoilPair,
    LikertProtocolConfig,
    ScoredVotePair,
    TiePolicy,
    foil_accuracy,
    likert_correlation,
    load_system_summaries,
    pairwise_accuracy,
    resampled_reference_eval,
    system_level_correlation,
)
from capeval.scoring import (
    ScoreConfig,
    clip_score,
    corpus_scores,
    read_scores_jsonl,
    ref_clip_score,
    write_scores_jsonl,
)
from capeval.selection import bootstrap_forward_select, pick_histogram
from capeval.store import (
    load_captions,
    load_foil_pairs,
    load_judgments,
    load_metric_table,
    read_embedding_store,
    reference_key,
)

PROMPT_POLICIES = ("prefix-candidates", "prefix-all", "no-prefix")
DEFAULT_PROMPT_POLICY = "prefix-candidates"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_UNDEFINED = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def worker_count() -> int:
    """Worker cap from CAPEVAL_THREADS, defaulting to the CPU count."""
    raw = os.environ.get("CAPEVAL_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise DataError(f"CAPEVAL_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise DataError(f"CAPEVAL_THREADS must be >= 1, got {value}")
    return value


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(args, subcommand: str, config: dict, input_paths: list) -> None:
    manifest_path = args.manifest or args.out + ".manifest.json"
    manifest = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "config": config,
        "inputs": {path: _sha256(path) for path in input_paths},
    }
    _write_json(manifest_path, manifest)


def _x100(value: float) -> str:
    """Display convention for statistic values: x100 with one decimal."""
    return f"{value * 100:.1f}"


def _tie_policy(args) -> TiePolicy:
    if args.tie_policy == "half-credit":
        return TiePolicy.half_credit()
    return TiePolicy(mode="seeded-random", seed=args.tie_seed)


def _tie_config(args) -> dict:
    return {
        "tie_policy": args.tie_policy,
        "tie_seed": args.tie_seed if args.tie_policy == "seeded-random" else None,
    }


def _pairwise_result_json(result) -> dict:
    return {
        "accuracy": result.accuracy,
        "accuracy_x100": _x100(result.accuracy),
        "n_input": result.n_input,
        "n_scored": result.n_scored,
        "n_majority_ties_dropped": result.n_majority_ties_dropped,
        "n_score_ties": result.n_score_ties,
    }


def _load_stores(args):
    candidates = read_embedding_store(args.cand_emb)
    images = read_embedding_store(args.img_emb)
    references = read_embedding_store(args.ref_emb) if args.ref_emb else None
    return candidates, images, references


def _embedding_inputs(args) -> list:
    paths = [args.captions, args.cand_emb, args.img_emb]
    if args.ref_emb:
        paths.append(args.ref_emb)
    return paths


def cmd_score(args) -> None:
    corpus = load_captions(args.captions)
    candidates, images, references = _load_stores(args)
    cfg = ScoreConfig(w=args.w, clamp_negative=not args.no_clamp)
    result = corpus_scores(corpus, candidates, images, references, cfg)
    write_scores_jsonl(result, cfg, args.out)
    config = {
        "w": args.w,
        "clamp_negative": not args.no_clamp,
        "prompt_policy": args.prompt_policy,
        "n_pairs": len(result.pairs),
    }
    _write_manifest(args, "score", config, _embedding_inputs(args))


def cmd_eval_likert(args) -> None:
    corpus = load_captions(args.captions)
    judgments = load_judgments(args.judgments, corpus)
    pairs, summary = read_scores_jsonl(args.scores)
    scores = {}
    for pair in pairs:
        value = pair.clip_s if args.score_field == "clip_s" else pair.ref_clip_s
        if value is None:
            raise DataError(
                f"scores file lacks ref_clip_s for {(pair.image_id, pair.candidate_id)}"
            )
        scores[(pair.image_id, pair.candidate_id)] = value
    aggregation = {"A": "flatten", "B": "mean"}.get(args.aggregation, args.aggregation)
    cfg = LikertProtocolConfig(aggregation=aggregation, statistic=args.stat)
    value = likert_correlation(scores, judgments, cfg)
    config = {
        "aggregation": aggregation,
        "statistic": args.stat,
        "score_field": args.score_field,
        "w": summary["w"],
        "prompt_policy": DEFAULT_PROMPT_POLICY,
    }
    report = {
        "protocol": "likert-correlation",
        "config": config,
        "n_pairs": len(judgments.likert),
        "n_ratings": sum(len(r) for r in judgments.likert.values()),
        "value": value,
        "value_x100": _x100(value),
    }
    _write_json(args.out, report)
    _write_manifest(
        args, "eval-likert", config, [args.captions, args.judgments, args.scores]
    )


def cmd_eval_pairwise(args) -> None:
    corpus = load_captions(args.captions)
    judgments = load_judgments(args.judgments, corpus)
    candidates, images, references = _load_stores(args)
    cfg = ScoreConfig(w=args.w)
    tie = _tie_policy(args)
    if references is not None:
        pool: dict[str, list[str]] = {}
        for item in corpus:
            keys = pool.setdefault(item.image_id, [])
            for text in item.references:
                key = reference_key(text)
                if key not in keys:
                    keys.append(key)

        def scorer(image_id, candidate_id, reference_ids):
            ref_embeds = [references[rid] for rid in reference_ids]
            return ref_clip_score(candidates[candidate_id], ref_embeds, images[image_id], cfg)

        result = resampled_reference_eval(
            judgments,
            pool,
            scorer,
            k=args.refs_per_draw,
            draws=args.draws,
            seed=args.seed,
            tie_policy=tie,
        )
        mean_accuracy = result.mean_accuracy
        per_draw = result.per_draw
    else:
        scored = [
            ScoredVotePair(
                score_a=clip_score(candidates[j.candidate_a_id], images[j.image_id], cfg),
                score_b=clip_score(candidates[j.candidate_b_id], images[j.image_id], cfg),
                votes_a=j.votes_a,
                votes_b=j.votes_b,
            )
            for j in judgments.pairwise
        ]
        if not scored:
            raise DataError("no pairwise judgments in the judgments file")
        single = pairwise_accuracy(scored, tie)
        mean_accuracy = single.accuracy
        per_draw = (single,)
    config = {
        "w": args.w,
        "prompt_policy": args.prompt_policy,
        "reference_based": references is not None,
        "refs_per_draw": args.refs_per_draw if references is not None else None,
        "draws": args.draws if references is not None else 1,
        "seed": args.seed if references is not None else None,
        **_tie_config(args),
    }
    report = {
        "protocol": "pairwise-accuracy",
        "config": config,
        "mean_accuracy": mean_accuracy,
        "mean_accuracy_x100": _x100(mean_accuracy),
        "per_draw": [_pairwise_result_json(r) for r in per_draw],
    }
    _write_json(args.out, report)
    _write_manifest(
        args, "eval-pairwise", config, [args.judgments] + _embedding_inputs(args)
    )


def cmd_eval_foil(args) -> None:
    corpus = load_captions(args.captions)
    records = load_foil_pairs(args.pairs, corpus)
    candidates, images, references = _load_stores(args)
    cfg = ScoreConfig(w=args.w)
    items = {item.key: item for item in corpus}

    def item_score(image_id: str, candidate_id: str) -> float:
        candidate = candidates[candidate_id]
        image = images[image_id]
        if references is None:
            return clip_score(candidate, image, cfg)
        item = items[(image_id, candidate_id)]
        if not item.references:
            raise DataError(
                f"item {(image_id, candidate_id)} has no references "
                "but reference-based scoring was requested"
            )
        ref_embeds = [references[reference_key(t)] for t in item.references]
        return ref_clip_score(candidate, ref_embeds, image, cfg)

    pairs = [
        FoilPair(
            true_score=item_score(r.image_id, r.true_candidate_id),
            foil_score=item_score(r.image_id, r.foil_candidate_id),
        )
        for r in records
    ]
    result = foil_accuracy(pairs, _tie_policy(args))
    config = {
        "w": args.w,
        "prompt_policy": args.prompt_policy,
        "reference_based": references is not None,
        **_tie_config(args),
    }
    report = {
        "protocol": "foil-detection",
        "config": config,
        **_pairwise_result_json(result),
    }
    _write_json(args.out, report)
    _write_manifest(args, "eval-foil", config, [args.pairs] + _embedding_inputs(args))


def cmd_eval_system(args) -> None:
    summaries = load_system_summaries(args.systems)
    result = system_level_correlation(summaries)
    config = {"w": 2.5, "prompt_policy": DEFAULT_PROMPT_POLICY}
    report = {
        "protocol": "system-correlation",
        "config": config,
        "n_systems": len(summaries),
        "spearman_m1": result.spearman_m1,
        "spearman_m1_x100": _x100(result.spearman_m1),
        "spearman_m2": result.spearman_m2,
        "spearman_m2_x100": _x100(result.spearman_m2),
        "pearson_m1": result.pearson_m1,
        "pearson_m1_x100": _x100(result.pearson_m1),
        "pearson_m2": result.pearson_m2,
        "pearson_m2_x100": _x100(result.pearson_m2),
    }
    _write_json(args.out, report)
    _write_manifest(args, "eval-system", config, [args.systems])


def _csv_sibling(out_path: str, suffix: str) -> str:
    base = out_path[:-5] if out_path.endswith(".json") else out_path
    return base + suffix


def cmd_forward_select(args) -> None:
    table = load_metric_table(args.table)
    result = bootstrap_forward_select(
        table,
        args.folds,
        args.bootstraps,
        seed=args.seed,
        workers=worker_count(),
    )
    r2_matrix = np.array([trace.r2_path for trace in result.traces])
    config = {
        "folds": args.folds,
        "bootstraps": args.bootstraps,
        "seed": args.seed,
        "metrics": sorted(table.metrics),
        "w": 2.5,
        "prompt_policy": DEFAULT_PROMPT_POLICY,
    }
    report = {
        "protocol": "forward-selection",
        "config": config,
        "n_rows": len(table),
        "traces": [
            {"order": list(t.order), "r2_path": list(t.r2_path)} for t in result.traces
        ],
        "first_pick_counts": result.first_pick_counts,
        "second_pick_counts": pick_histogram(result.traces, 1),
        "third_pick_counts": pick_histogram(result.traces, 2),
        "r2_path_mean": [float(v) for v in r2_matrix.mean(axis=0)],
        "r2_path_min": [float(v) for v in r2_matrix.min(axis=0)],
        "r2_path_max": [float(v) for v in r2_matrix.max(axis=0)],
    }
    _write_json(args.out, report)
    csv_path = args.r2_csv or _csv_sibling(args.out, "-r2path.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("step,mean_r2,min_r2,max_r2\n")
        for step in range(r2_matrix.shape[1]):
            column = r2_matrix[:, step]
            fh.write(
                f"{step + 1},{float(column.mean())!r},"
                f"{float(column.min())!r},{float(column.max())!r}\n"
            )
    _write_manifest(args, "forward-select", config, [args.table])


def cmd_power_sim(args) -> None:
    human = ()
    if args.human_scores:
        try:
            human = tuple(float(v) for v in args.human_scores.split(","))
        except ValueError:
            raise DataError(
                f"--human-scores must be comma-separated numbers, got {args.human_scores!r}"
            ) from None
    cfg = PowerSimConfig(
        n_systems=args.systems,
        trials_per_metric=args.trials,
        simulations=args.sims,
        seed=args.seed,
        human_scores=human,
    )
    result = power_simulation(cfg, workers=worker_count())
    config = {
        "n_systems": cfg.n_systems,
        "trials_per_metric": cfg.trials_per_metric,
        "simulations": cfg.simulations,
        "seed": cfg.seed,
        "human_scores": list(cfg.human_scores),
        "w": 2.5,
        "prompt_policy": DEFAULT_PROMPT_POLICY,
    }
    report = {
        "protocol": "power-simulation",
        "config": config,
        "mean_best_spearman": result.mean_best_spearman,
        "mean_best_spearman_x100": _x100(result.mean_best_spearman),
        "mean_best_pearson": result.mean_best_pearson,
        "mean_best_pearson_x100": _x100(result.mean_best_pearson),
        "mean_single_spearman": result.mean_single_spearman,
        "mean_single_spearman_x100": _x100(result.mean_single_spearman),
        "mean_single_pearson": result.mean_single_pearson,
        "mean_single_pearson_x100": _x100(result.mean_single_pearson),
    }
    _write_json(args.out, report)
    _write_manifest(args, "power-sim", config, [])


def _summary_json(summary) -> dict | None:
    if summary is None:
        return None
    return {
        "count": summary.count,
        "min": summary.minimum,
        "max": summary.maximum,
        "mean": summary.mean,
        "quantiles": {f"{q:g}": v for q, v in summary.quantiles.items()},
    }


def _write_histogram_csv(path: str, histogram) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_start,bin_end,count\n")
        for i, count in enumerate(histogram.counts):
            start = float(histogram.bin_edges[i])
            end = float(histogram.bin_edges[i + 1])
            fh.write(f"{start!r},{end!r},{int(count)}\n")


def cmd_rescale_stats(args) -> None:
    corpus = load_captions(args.captions)
    candidates, images, references = _load_stores(args)
    report = similarity_distributions(candidates, images, references, corpus, bins=args.bins)
    image_csv = _csv_sibling(args.out, "-candidate-image-hist.csv")
    reference_csv = _csv_sibling(args.out, "-candidate-reference-hist.csv")
    _write_histogram_csv(image_csv, report.candidate_image)
    sections = {
        "candidate_image": {
            "negative_count": report.candidate_image.negative_count,
            "summary": _summary_json(report.candidate_image.summary),
            "rescale": rescale_stats(report.image_values, args.w),
            "histogram_csv": image_csv,
        },
        "candidate_reference": None,
    }
    if report.reference_values:
        _write_histogram_csv(reference_csv, report.candidate_reference)
        sections["candidate_reference"] = {
            "negative_count": report.candidate_reference.negative_count,
            "summary": _summary_json(report.candidate_reference.summary),
            "rescale": rescale_stats(report.reference_values, args.w),
            "histogram_csv": reference_csv,
        }
    config = {
        "w": args.w,
        "bins": args.bins,
        "prompt_policy": args.prompt_policy,
    }
    payload = {"protocol": "rescale-stats", "config": config, **sections}
    _write_json(args.out, payload)
    _write_manifest(args, "rescale-stats", config, _embedding_inputs(args))


def _add_out(parser, help_text: str) -> None:
    parser.add_argument("--out", required=True, help=help_text)
    parser.add_argument(
        "--manifest",
        help="manifest path (default: <out>.manifest.json)",
    )


def _add_embedding_args(parser, refs_help: str) -> None:
    parser.add_argument("--captions", required=True, help="captions.jsonl")
    parser.add_argument("--cand-emb", required=True, help="candidate text embeddings (.ceb)")
    parser.add_argument("--img-emb", required=True, help="image embeddings (.ceb)")
    parser.add_argument("--ref-emb", help=refs_help)
    parser.add_argument(
        "--prompt-policy",
        choices=PROMPT_POLICIES,
        default=DEFAULT_PROMPT_POLICY,
        help="prompt policy the embeddings were produced under (manifest echo only)",
    )


def _add_tie_args(parser) -> None:
    parser.add_argument(
        "--tie-policy",
        choices=("seeded-random", "half-credit"),
        default="seeded-random",
        help="how equal scores are credited",
    )
    parser.add_argument(
        "--tie-seed",
        type=int,
        default=DEFAULT_TIE_SEED,
        help="seed for seeded-random tie breaking",
    )


def build_parser() -> _Parser:
    parser = _Parser(
        prog="capeval",
        description="Caption-evaluation toolkit: scoring, human-judgment protocols, "
        "metric diagnostics.",
    )
    parser.add_argument("--version", action="version", version=f"capeval {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser(
        "score",
        help="score (candidate, image) pairs; writes scores.jsonl",
        description="Writes one scored pair per line plus a trailing summary line "
        '{"corpus_clip_s", "corpus_ref_clip_s", "w", "n"}.',
    )
    _add_embedding_args(p, "reference text embeddings (.ceb); enables reference-based scores")
    p.add_argument("--w", type=float, default=2.5, help="similarity rescaling factor")
    p.add_argument(
        "--no-clamp",
        action="store_true",
        help="keep negative cosines in the image-side score (diagnostics only)",
    )
    _add_out(p, "output scores.jsonl path")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser(
        "eval-likert",
        help="rank correlation of scores against graded human ratings",
        description="Consumes scores.jsonl from `score` and likert records from "
        "judgments.jsonl; reports the chosen rank statistic raw and x100.",
    )
    p.add_argument("--captions", required=True, help="captions.jsonl")
    p.add_argument("--judgments", required=True, help="judgments.jsonl with likert records")
    p.add_argument("--scores", required=True, help="scores.jsonl from the score subcommand")
    p.add_argument(
        "--aggregation",
        choices=("A", "B", "flatten", "mean"),
        default="flatten",
        help="flatten (alias A): one point per individual rating; "
        "mean (alias B): one point per pair, mean rating",
    )
    p.add_argument("--stat", choices=("tau-b", "tau-c"), default="tau-c")
    p.add_argument(
        "--score-field",
        choices=("clip_s", "ref_clip_s"),
        default="clip_s",
        help="which score column to correlate",
    )
    _add_out(p, "report JSON path")
    p.set_defaults(handler=cmd_eval_likert)

    p = sub.add_parser(
        "eval-pairwise",
        help="accuracy against majority pairwise preferences",
        description="Without --ref-emb, scores are reference-free and computed once. "
        "With --ref-emb, references are re-drawn per image (--refs-per-draw, --draws) "
        "and the accuracy is averaged over draws.",
    )
    _add_embedding_args(p, "reference embeddings; enables the resampled reference protocol")
    p.add_argument("--judgments", required=True, help="judgments.jsonl with pairwise records")
    p.add_argument("--w", type=float, default=2.5, help="similarity rescaling factor")
    p.add_argument("--refs-per-draw", type=int, default=5, help="references sampled per image")
    p.add_argument("--draws", type=int, default=5, help="number of seeded redraws")
    p.add_argument("--seed", type=int, default=0, help="base seed; draw d uses seed+d")
    _add_tie_args(p)
    _add_out(p, "report JSON path")
    p.set_defaults(handler=cmd_eval_pairwise)

    p = sub.add_parser(
        "eval-foil",
        help="detection accuracy on (intact, corrupted) caption pairs",
        description="Scores both sides of each pair (reference-based when --ref-emb is "
        "given, using each item's own references) and reports the fraction where the "
        "intact caption wins.",
    )
    _add_embedding_args(p, "reference embeddings; score both sides reference-based")
    p.add_argument(
        "--pairs",
        required=True,
        help='foil.jsonl: {"image_id","true_candidate_id","foil_candidate_id"} per line',
    )
    p.add_argument("--w", type=float, default=2.5, help="similarity rescaling factor")
    _add_tie_args(p)
    _add_out(p, "report JSON path")
    p.set_defaults(handler=cmd_eval_foil)

    p = sub.add_parser(
        "eval-system",
        help="correlate per-system metric means with human system measures",
        description="Input CSV header: system_id,metric_mean,human_m1,human_m2.",
    )
    p.add_argument("--systems", required=True, help="system summary CSV")
    _add_out(p, "report JSON path")
    p.set_defaults(handler=cmd_eval_system)

    p = sub.add_parser(
        "forward-select",
        help="greedy metric-set growth by cross-validated R^2 over bootstraps",
        description="Input CSV header: instance_id,human,<metric1>,... "
        "Also writes <out>-r2path.csv with the mean/min/max R^2 path for plotting.",
    )
    p.add_argument("--table", required=True, help="metric table CSV")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--bootstraps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="bootstrap b uses seed+b")
    p.add_argument("--r2-csv", help="R^2 path CSV (default: derived from --out)")
    _add_out(p, "report JSON path")
    p.set_defaults(handler=cmd_forward_select)

    p = sub.add_parser(
        "power-sim",
        help="how much best-of-N run selection inflates correlations",
        description="Draws N uniform-noise metrics per simulation against fixed "
        "per-system human scores and compares best-of-N against the first draw.",
    )
    p.add_argument("--systems", type=int, default=12, help="number of systems")
    p.add_argument("--trials", type=int, default=10, help="runs per simulated metric")
    p.add_argument("--sims", type=int, default=1000, help="number of simulations")
    p.add_argument("--seed", type=int, default=0, help="simulation s uses seed+s")
    p.add_argument(
        "--human-scores",
        help="comma-separated per-system human scores (default: evenly spaced)",
    )
    _add_out(p, "report JSON path")
    p.set_defaults(handler=cmd_power_sim)

    p = sub.add_parser(
        "rescale-stats",
        help="raw cosine distributions and the w-rescaling check",
        description="Histograms raw candidate-image and candidate-reference cosines "
        "(CSV siblings of --out) and reports how w*max(cos,0) covers [0,1].",
    )
    _add_embedding_args(p, "reference embeddings; adds the candidate-reference histogram")
    p.add_argument("--w", type=float, default=2.5, help="similarity rescaling factor")
    p.add_argument("--bins", type=int, default=50)
    _add_out(p, "report JSON path")
    p.set_defaults(handler=cmd_rescale_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.handler(args)
    except UndefinedStatisticError as exc:
        print(f"capeval {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except (CapevalError, OSError) as exc:
        print(f"capeval {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

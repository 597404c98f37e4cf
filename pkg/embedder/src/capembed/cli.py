"""Command line: embed a manifest of texts or images into a .ceb file.

Exit codes: 0 success, 1 partial success (some images were undecodable and
skipped), 2 usage or input error.
"""

import argparse
import os
import sys

from PIL import Image, UnidentifiedImageError

from capembed import EmbedError, __version__
from capembed.ceb import write_ceb
from capembed.encoders import ClipEncoder, FakeEncoder
from capembed.jobs import (
    DEFAULT_PROMPT,
    PROMPT_POLICIES,
    apply_prompt,
    load_image_manifest,
    load_text_manifest,
)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INPUT = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed",
        description="Extract text or image embeddings to a .ceb file.",
    )
    parser.add_argument("--version", action="version", version=f"embed {__version__}")
    parser.add_argument("--modality", required=True, choices=("text", "image"))
    parser.add_argument(
        "--input",
        required=True,
        help='manifest JSONL: {"id","text"[,"role"]} for text, {"id","path"} for images',
    )
    parser.add_argument("--out", required=True, help="output .ceb path")
    parser.add_argument(
        "--prompt-policy",
        choices=PROMPT_POLICIES,
        default="prefix-candidates",
        help="which text records get the prompt prefix (text modality only)",
    )
    parser.add_argument(
        "--prompt",
        default=DEFAULT_PROMPT,
        help=f"prefix applied per policy (default {DEFAULT_PROMPT!r})",
    )
    parser.add_argument(
        "--encoder",
        choices=("clip", "fake"),
        default="clip",
        help="fake is a deterministic no-weights stand-in for pipeline testing",
    )
    parser.add_argument(
        "--model-dir",
        default=os.environ.get("CAPEMBED_MODEL_DIR"),
        help="local model checkout (or set CAPEMBED_MODEL_DIR); never downloads",
    )
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    return parser


def _make_encoder(args):
    if args.encoder == "fake":
        return FakeEncoder()
    if not args.model_dir:
        raise EmbedError(
            "the clip encoder needs --model-dir or CAPEMBED_MODEL_DIR; "
            "use --encoder fake for a weights-free run"
        )
    return ClipEncoder(args.model_dir, device=args.device, batch_size=args.batch_size)


def _run_text(args, encoder) -> int:
    records = load_text_manifest(args.input)
    texts = apply_prompt(records, args.prompt_policy, args.prompt)
    vectors, truncated = encoder.embed_texts(texts)
    for record, was_truncated in zip(records, truncated):
        if was_truncated:
            print(
                f"embed: warning: text for {record.record_id!r} exceeds "
                f"{encoder.token_limit} tokens, truncated",
                file=sys.stderr,
            )
    write_ceb(
        args.out,
        encoder.dimension,
        {r.record_id: vectors[i] for i, r in enumerate(records)},
    )
    return EXIT_OK


def _run_images(args, encoder) -> int:
    records = load_image_manifest(args.input)
    decoded = []
    skipped = 0
    for record in records:
        try:
            with Image.open(record.path) as image:
                image.load()
                decoded.append((record.record_id, image.convert("RGB")))
        except (OSError, UnidentifiedImageError) as exc:
            skipped += 1
            print(f"embed: skipping undecodable image {record.record_id!r}: {exc}",
                  file=sys.stderr)
    if not decoded:
        raise EmbedError("no decodable images in the manifest")
    vectors = encoder.embed_images([image for _, image in decoded])
    write_ceb(
        args.out,
        encoder.dimension,
        {record_id: vectors[i] for i, (record_id, _) in enumerate(decoded)},
    )
    return EXIT_PARTIAL if skipped else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        encoder = _make_encoder(args)
        if args.modality == "text":
            return _run_text(args, encoder)
        return _run_images(args, encoder)
    except (EmbedError, OSError) as exc:
        print(f"embed: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

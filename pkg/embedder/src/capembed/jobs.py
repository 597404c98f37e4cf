"""Manifest parsing and prompt-policy application.

Text manifests are JSONL {"id": str, "text": str} with an optional
"role": "candidate" (default) or "reference". Image manifests are JSONL
{"id": str, "path": str}. Ids must be unique within a manifest.
"""

import json
from dataclasses import dataclass

from capembed import EmbedError

PROMPT_POLICIES = ("prefix-candidates", "prefix-all", "no-prefix")
DEFAULT_PROMPT = "A photo depicts "
ROLES = ("candidate", "reference")


@dataclass(frozen=True)
class TextRecord:
    record_id: str
    text: str
    role: str = "candidate"


@dataclass(frozen=True)
class ImageRecord:
    record_id: str
    path: str


def _records(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbedError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise EmbedError(f"{path}:{lineno}: expected an object per line")
            yield lineno, record


def _get(record, key, lineno, path):
    value = record.get(key)
    if not isinstance(value, str) or not value:
        raise EmbedError(f"{path}:{lineno}: missing or empty {key!r}")
    return value


def load_text_manifest(path) -> list[TextRecord]:
    records = []
    seen = set()
    for lineno, record in _records(path):
        record_id = _get(record, "id", lineno, path)
        text = _get(record, "text", lineno, path)
        role = record.get("role", "candidate")
        if role not in ROLES:
            raise EmbedError(f"{path}:{lineno}: role must be one of {ROLES}, got {role!r}")
        if record_id in seen:
            raise EmbedError(f"{path}:{lineno}: duplicate id {record_id!r}")
        seen.add(record_id)
        records.append(TextRecord(record_id, text, role))
    if not records:
        raise EmbedError(f"{path}: manifest has no records")
    return records


def load_image_manifest(path) -> list[ImageRecord]:
    records = []
    seen = set()
    for lineno, record in _records(path):
        record_id = _get(record, "id", lineno, path)
        image_path = _get(record, "path", lineno, path)
        if record_id in seen:
            raise EmbedError(f"{path}:{lineno}: duplicate id {record_id!r}")
        seen.add(record_id)
        records.append(ImageRecord(record_id, image_path))
    if not records:
        raise EmbedError(f"{path}: manifest has no records")
    return records


def apply_prompt(records: list[TextRecord], policy: str, prompt: str) -> list[str]:
    """Resolve the text each record is actually encoded from.

    prefix-candidates prompts candidate-role records only; prefix-all
    prompts everything; no-prefix leaves texts untouched.
    """
    if policy not in PROMPT_POLICIES:
        raise EmbedError(f"unknown prompt policy {policy!r}")
    if policy != "no-prefix" and not prompt:
        raise EmbedError(f"prompt must be nonempty under policy {policy!r}")
    if policy == "no-prefix":
        return [r.text for r in records]
    if policy == "prefix-all":
        return [prompt + r.text for r in records]
    return [prompt + r.text if r.role == "candidate" else r.text for r in records]

"""On-disk formats and in-memory stores for embeddings, captions, judgments,
and metric tables.

Embedding file (`.ceb`, little-endian):

    magic "CEB1" | version u32=1 | dimension u32 | count u64
    per entry: id length u16 | UTF-8 id bytes | dimension * float32

Entries are written in lexicographic id order so identical stores produce
identical bytes. Vectors are stored as produced (not necessarily unit norm)
and normalized once at load; the pre-normalization norm is retained for
diagnostics. Disk precision is float32, all in-memory arithmetic is float64.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from capeval.errors import DataError, FormatError, LoadError

MAGIC = b"CEB1"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_ID_LEN = struct.Struct("<H")

__all__ = [
    "Embedding",
    "EmbeddingStore",
    "CaptionItem",
    "CaptionCorpus",
    "PairwiseJudgment",
    "JudgmentSet",
    "FoilRecord",
    "MetricTable",
    "read_embedding_store",
    "write_embedding_store",
    "load_captions",
    "load_judgments",
    "load_foil_pairs",
    "load_metric_table",
    "load_corpus",
    "reference_key",
]


def reference_key(text: str) -> str:
    """Stable embedding-store id for a reference caption, derived from its text.

    Reference captions live inline in the caption file, so their embeddings
    are keyed by content: the same sentence shared by several items embeds
    once. Candidate and image embeddings use their explicit ids instead.
    """
    return "ref:" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Embedding:
    """A unit-normalized vector plus its pre-normalization norm.

    `raw` keeps the float32 values exactly as produced/stored, which makes
    write-then-read a bit-exact roundtrip; `values` is the float64 unit
    vector used for all scoring arithmetic.
    """

    values: np.ndarray
    norm: float
    raw: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Embedding):
            return NotImplemented
        return self.raw.shape == other.raw.shape and bool(np.all(self.raw == other.raw))

    def __hash__(self):
        return hash(self.raw.tobytes())


def _normalize(raw: np.ndarray, entry_id: str) -> Embedding:
    if np.isnan(raw).any():
        raise DataError(f"NaN in vector: {entry_id}")
    values = raw.astype(np.float64)
    norm = float(np.linalg.norm(values))
    if norm == 0.0:
        raise DataError(f"zero norm: {entry_id}")
    values = values / norm
    values.setflags(write=False)
    raw.setflags(write=False)
    return Embedding(values=values, norm=norm, raw=raw)


class EmbeddingStore:
    """Immutable-after-load map from string id to Embedding, one shared dimension."""

    def __init__(self, dimension: int):
        if dimension <= 0:
            raise DataError(f"dimension must be positive, got {dimension}")
        self.dimension = int(dimension)
        self.entries: dict[str, Embedding] = {}

    def add(self, entry_id: str, raw_values) -> None:
        raw = np.asarray(raw_values, dtype=np.float32)
        if raw.ndim != 1 or raw.shape[0] != self.dimension:
            raise DataError(
                f"vector for {entry_id!r} has shape {raw.shape}, expected ({self.dimension},)"
            )
        if entry_id in self.entries:
            raise DataError(f"duplicate embedding id: {entry_id}")
        self.entries[entry_id] = _normalize(raw, entry_id)

    @classmethod
    def from_arrays(cls, dimension: int, arrays: dict) -> "EmbeddingStore":
        store = cls(dimension)
        for entry_id, vec in arrays.items():
            store.add(entry_id, vec)
        return store

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self.entries

    def __getitem__(self, entry_id: str) -> Embedding:
        try:
            return self.entries[entry_id]
        except KeyError:
            raise DataError(f"missing embedding id: {entry_id}") from None

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return list(self.entries)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return self.dimension == other.dimension and self.entries == other.entries


def write_embedding_store(store: EmbeddingStore, path) -> None:
    if len(store) == 0:
        raise DataError("refusing to write an empty embedding store")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, store.dimension, len(store)))
        for entry_id in sorted(store.entries):
            id_bytes = entry_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise FormatError(f"id longer than 65535 bytes: {entry_id[:40]}...")
            emb = store.entries[entry_id]
            fh.write(_ID_LEN.pack(len(id_bytes)))
            fh.write(id_bytes)
            fh.write(emb.raw.astype("<f4").tobytes())


def read_embedding_store(path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, dimension, count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if dimension == 0:
            raise FormatError(f"{path}: zero dimension")
        store = EmbeddingStore(dimension)
        vec_bytes = 4 * dimension
        for index in range(count):
            len_raw = fh.read(_ID_LEN.size)
            if len(len_raw) < _ID_LEN.size:
                raise FormatError(f"{path}: truncated at entry {index}")
            (id_len,) = _ID_LEN.unpack(len_raw)
            id_bytes = fh.read(id_len)
            payload = fh.read(vec_bytes)
            if len(id_bytes) < id_len or len(payload) < vec_bytes:
                raise FormatError(f"{path}: truncated at entry {index}")
            entry_id = id_bytes.decode("utf-8")
            raw = np.frombuffer(payload, dtype="<f4").astype(np.float32)
            store.add(entry_id, raw)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} declared entries")
    return store


@dataclass(frozen=True)
class CaptionItem:
    image_id: str
    candidate_id: str
    caption: str
    references: tuple[str, ...] = ()

    @property
    def key(self) -> tuple[str, str]:
        return (self.image_id, self.candidate_id)


@dataclass(frozen=True)
class CaptionCorpus:
    items: tuple[CaptionItem, ...]

    def __post_init__(self):
        seen = set()
        for item in self.items:
            if item.key in seen:
                raise DataError(f"duplicate (image_id, candidate_id): {item.key}")
            seen.add(item.key)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def keys(self) -> set[tuple[str, str]]:
        return {item.key for item in self.items}


@dataclass(frozen=True)
class PairwiseJudgment:
    image_id: str
    candidate_a_id: str
    candidate_b_id: str
    votes_a: int
    votes_b: int


@dataclass
class JudgmentSet:
    likert: dict[tuple[str, str], list[float]] = field(default_factory=dict)
    pairwise: list[PairwiseJudgment] = field(default_factory=list)


@dataclass(frozen=True)
class FoilRecord:
    """One (intact caption, corrupted caption) pair for the same image."""

    image_id: str
    true_candidate_id: str
    foil_candidate_id: str


@dataclass
class MetricTable:
    instance_ids: list[str]
    human: np.ndarray
    metrics: dict[str, np.ndarray]

    def __len__(self):
        return len(self.instance_ids)

    def matrix(self, names: list[str]) -> np.ndarray:
        return np.column_stack([self.metrics[name] for name in names])


def _jsonl_records(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"invalid JSON ({exc.msg})", str(path), lineno) from None


def _require(record, key, lineno, path, kind=None):
    if key not in record:
        raise LoadError(f"missing field {key!r}", str(path), lineno)
    value = record[key]
    if kind is not None and not isinstance(value, kind):
        raise LoadError(f"field {key!r} has wrong type", str(path), lineno)
    return value


def load_captions(path) -> CaptionCorpus:
    items = []
    seen = set()
    for lineno, record in _jsonl_records(path):
        image_id = _require(record, "image_id", lineno, path, str)
        candidate_id = _require(record, "candidate_id", lineno, path, str)
        caption = _require(record, "caption", lineno, path, str)
        references = record.get("references", [])
        if not isinstance(references, list) or any(not isinstance(r, str) for r in references):
            raise LoadError("references must be a list of strings", str(path), lineno)
        key = (image_id, candidate_id)
        if key in seen:
            raise LoadError(f"duplicate (image_id, candidate_id) {key}", str(path), lineno)
        seen.add(key)
        items.append(CaptionItem(image_id, candidate_id, caption, tuple(references)))
    return CaptionCorpus(tuple(items))


def load_judgments(path, corpus: CaptionCorpus) -> JudgmentSet:
    known = corpus.keys()
    judgments = JudgmentSet()
    for lineno, record in _jsonl_records(path):
        kind = _require(record, "kind", lineno, path, str)
        if kind == "likert":
            image_id = _require(record, "image_id", lineno, path, str)
            candidate_id = _require(record, "candidate_id", lineno, path, str)
            ratings = _require(record, "ratings", lineno, path, list)
            if not ratings or any(not isinstance(r, (int, float)) for r in ratings):
                raise LoadError("ratings must be a nonempty list of numbers", str(path), lineno)
            key = (image_id, candidate_id)
            if key not in known:
                raise LoadError(f"judgment references unknown pair {key}", str(path), lineno)
            if key in judgments.likert:
                raise LoadError(f"duplicate likert record for {key}", str(path), lineno)
            judgments.likert[key] = [float(r) for r in ratings]
        elif kind == "pairwise":
            image_id = _require(record, "image_id", lineno, path, str)
            a = _require(record, "candidate_a_id", lineno, path, str)
            b = _require(record, "candidate_b_id", lineno, path, str)
            votes_a = _require(record, "votes_a", lineno, path, int)
            votes_b = _require(record, "votes_b", lineno, path, int)
            if votes_a < 0 or votes_b < 0 or votes_a + votes_b < 1:
                raise LoadError("votes must be nonnegative with votes_a+votes_b >= 1",
                                str(path), lineno)
            for cid in (a, b):
                if (image_id, cid) not in known:
                    raise LoadError(
                        f"judgment references unknown pair {(image_id, cid)}", str(path), lineno
                    )
            judgments.pairwise.append(PairwiseJudgment(image_id, a, b, votes_a, votes_b))
        else:
            raise LoadError(f"unknown judgment kind {kind!r}", str(path), lineno)
    return judgments


def load_foil_pairs(path, corpus: CaptionCorpus) -> list[FoilRecord]:
    """foil.jsonl: {"image_id", "true_candidate_id", "foil_candidate_id"} per line.

    Both candidates must exist in the corpus under the same image.
    """
    known = corpus.keys()
    records = []
    for lineno, record in _jsonl_records(path):
        image_id = _require(record, "image_id", lineno, path, str)
        true_id = _require(record, "true_candidate_id", lineno, path, str)
        foil_id = _require(record, "foil_candidate_id", lineno, path, str)
        if true_id == foil_id:
            raise LoadError("true and foil candidate ids are identical", str(path), lineno)
        for cid in (true_id, foil_id):
            if (image_id, cid) not in known:
                raise LoadError(
                    f"foil pair references unknown pair {(image_id, cid)}", str(path), lineno
                )
        records.append(FoilRecord(image_id, true_id, foil_id))
    return records


def load_metric_table(path) -> MetricTable:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError("empty metric table", str(path), 1) from None
        if len(header) < 3 or header[0] != "instance_id" or header[1] != "human":
            raise LoadError(
                "header must be instance_id,human,<metric1>,...", str(path), 1
            )
        metric_names = header[2:]
        if len(set(metric_names)) != len(metric_names):
            raise LoadError("duplicate metric names in header", str(path), 1)
        instance_ids: list[str] = []
        human: list[float] = []
        columns: list[list[float]] = [[] for _ in metric_names]
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise LoadError(
                    f"ragged row: {len(row)} fields, expected {len(header)}", str(path), lineno
                )
            if row[0] in seen:
                raise LoadError(f"duplicate instance_id {row[0]!r}", str(path), lineno)
            seen.add(row[0])
            instance_ids.append(row[0])
            try:
                human.append(float(row[1]))
                for col, cell in zip(columns, row[2:]):
                    col.append(float(cell))
            except ValueError:
                raise LoadError("non-numeric cell", str(path), lineno) from None
        if not instance_ids:
            raise LoadError("metric table has no rows", str(path), 1)
    return MetricTable(
        instance_ids=instance_ids,
        human=np.array(human, dtype=np.float64),
        metrics={
            name: np.array(col, dtype=np.float64) for name, col in zip(metric_names, columns)
        },
    )


def load_corpus(captions_path, judgments_path=None, metric_table_path=None):
    """Load captions plus optional judgments and metric table, cross-validated."""
    corpus = load_captions(captions_path)
    judgments = JudgmentSet() if judgments_path is None else load_judgments(judgments_path, corpus)
    table = None if metric_table_path is None else load_metric_table(metric_table_path)
    return corpus, judgments, table

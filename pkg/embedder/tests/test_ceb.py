import struct

import numpy as np
import pytest

from capembed import EmbedError
from capembed.ceb import write_ceb


def read_raw(path):
    """Minimal independent reader; mirrors the format doc, not the writer."""
    with open(path, "rb") as fh:
        magic, version, dim, count = struct.unpack("<4sIIQ", fh.read(20))
        assert magic == b"CEB1" and version == 1
        entries = {}
        for _ in range(count):
            (id_len,) = struct.unpack("<H", fh.read(2))
            entry_id = fh.read(id_len).decode("utf-8")
            entries[entry_id] = np.frombuffer(fh.read(4 * dim), dtype="<f4")
        assert fh.read() == b""
    return dim, entries


def test_roundtrip_exact_float32(tmp_path):
    rng = np.random.default_rng(0)
    vectors = {f"e{i}": rng.normal(size=8).astype(np.float32) for i in range(5)}
    path = tmp_path / "v.ceb"
    write_ceb(path, 8, vectors)
    dim, got = read_raw(path)
    assert dim == 8
    for entry_id, vec in vectors.items():
        assert np.array_equal(got[entry_id], vec)


def test_entries_sorted_by_id(tmp_path):
    path = tmp_path / "v.ceb"
    write_ceb(path, 2, {"b": [1.0, 0.0], "a": [0.0, 1.0], "c": [1.0, 1.0]})
    _, got = read_raw(path)
    assert list(got) == ["a", "b", "c"]


def test_same_entries_byte_identical(tmp_path):
    vectors = {"x": np.array([0.25, -1.5], dtype=np.float32), "y": [3.0, 4.0]}
    first, second = tmp_path / "a.ceb", tmp_path / "b.ceb"
    write_ceb(first, 2, vectors)
    write_ceb(second, 2, dict(reversed(list(vectors.items()))))
    assert first.read_bytes() == second.read_bytes()


def test_primary_toolkit_reads_output(tmp_path):
    store_mod = pytest.importorskip("capeval.store")
    path = tmp_path / "v.ceb"
    write_ceb(path, 3, {"a": [3.0, 0.0, 4.0]})
    store = store_mod.read_embedding_store(path)
    assert store.dimension == 3
    assert store["a"].norm == pytest.approx(5.0, abs=1e-6)


def test_rejects_empty_bad_shape_and_nan(tmp_path):
    path = tmp_path / "v.ceb"
    with pytest.raises(EmbedError, match="empty"):
        write_ceb(path, 4, {})
    with pytest.raises(EmbedError, match="shape"):
        write_ceb(path, 4, {"a": [1.0, 2.0]})
    with pytest.raises(EmbedError, match="NaN"):
        write_ceb(path, 2, {"a": [1.0, float("nan")]})
    assert not path.exists()

"""End-to-end CLI checks using the fake encoder (no model weights needed)."""

import json

import numpy as np
import pytest
from PIL import Image

from capembed.cli import main
from capembed.encoders import FakeEncoder, preprocess_image


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def read_store(path):
    store_mod = pytest.importorskip("capeval.store")
    return store_mod.read_embedding_store(path)


def embed_text(tmp_path, records, *extra):
    manifest = tmp_path / "texts.jsonl"
    write_jsonl(manifest, records)
    out = tmp_path / "t.ceb"
    code = main(
        ["--modality", "text", "--input", str(manifest), "--encoder", "fake",
         "--out", str(out), *extra]
    )
    return code, out


class TestTextJobs:
    def test_embeds_and_roundtrips(self, tmp_path):
        code, out = embed_text(
            tmp_path, [{"id": "t1", "text": "a dog"}, {"id": "t2", "text": "a cat"}]
        )
        assert code == 0
        store = read_store(out)
        assert store.dimension == 512
        assert store.ids() == ["t1", "t2"]

    def test_same_text_same_vector(self, tmp_path):
        _, first = embed_text(tmp_path, [{"id": "a", "text": "a dog"}])
        vec_a = read_store(first)["a"].raw
        (tmp_path / "t.ceb").unlink()
        _, second = embed_text(tmp_path, [{"id": "b", "text": "a dog"}])
        assert np.array_equal(vec_a, read_store(second)["b"].raw)

    def test_prompt_policy_changes_encoded_text(self, tmp_path):
        records = [{"id": "a", "text": "a dog"}]
        _, out = embed_text(tmp_path, records, "--prompt-policy", "prefix-all")
        prefixed = read_store(out)["a"].raw
        out.unlink()
        _, out = embed_text(tmp_path, records, "--prompt-policy", "no-prefix")
        bare = read_store(out)["a"].raw
        assert not np.array_equal(prefixed, bare)

    def test_reference_role_skips_prompt_under_default_policy(self, tmp_path):
        _, out = embed_text(
            tmp_path, [{"id": "r", "text": "a dog", "role": "reference"}]
        )
        as_reference = read_store(out)["r"].raw
        out.unlink()
        _, out = embed_text(
            tmp_path, [{"id": "r", "text": "a dog"}], "--prompt-policy", "no-prefix"
        )
        assert np.array_equal(as_reference, read_store(out)["r"].raw)

    def test_overlong_text_truncated_with_warning(self, tmp_path, capsys):
        long_text = " ".join(["word"] * 200)
        code, out = embed_text(
            tmp_path,
            [{"id": "long", "text": long_text}, {"id": "short", "text": "hi"}],
        )
        assert code == 0
        err = capsys.readouterr().err
        assert "truncated" in err and "'long'" in err
        assert read_store(out).ids() == ["long", "short"]

    def test_truncation_point_is_the_token_limit(self, tmp_path):
        limit = FakeEncoder.token_limit
        exact = " ".join(f"w{i}" for i in range(limit))
        overlong = exact + " extra tail"
        _, out = embed_text(tmp_path, [{"id": "a", "text": exact}])
        vec_exact = read_store(out)["a"].raw
        out.unlink()
        _, out = embed_text(tmp_path, [{"id": "a", "text": overlong}])
        assert np.array_equal(vec_exact, read_store(out)["a"].raw)

    def test_empty_manifest_exits_2(self, tmp_path, capsys):
        manifest = tmp_path / "texts.jsonl"
        manifest.write_text("")
        code = main(
            ["--modality", "text", "--input", str(manifest), "--encoder", "fake",
             "--out", str(tmp_path / "t.ceb")]
        )
        assert code == 2
        assert "no records" in capsys.readouterr().err

    def test_missing_manifest_exits_2(self, tmp_path):
        code = main(
            ["--modality", "text", "--input", str(tmp_path / "nope.jsonl"),
             "--encoder", "fake", "--out", str(tmp_path / "t.ceb")]
        )
        assert code == 2

    def test_clip_without_model_dir_exits_2(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("CAPEMBED_MODEL_DIR", raising=False)
        manifest = tmp_path / "texts.jsonl"
        write_jsonl(manifest, [{"id": "a", "text": "x"}])
        code = main(
            ["--modality", "text", "--input", str(manifest),
             "--out", str(tmp_path / "t.ceb")]
        )
        assert code == 2
        assert "model-dir" in capsys.readouterr().err


def make_image(path, color, size=(320, 240)):
    Image.new("RGB", size, color).save(path)


class TestImageJobs:
    def test_embeds_images_and_duplicates_match(self, tmp_path):
        make_image(tmp_path / "red.png", (200, 30, 30))
        make_image(tmp_path / "red_copy.png", (200, 30, 30))
        make_image(tmp_path / "blue.png", (30, 30, 200))
        manifest = tmp_path / "images.jsonl"
        write_jsonl(
            manifest,
            [
                {"id": "r1", "path": str(tmp_path / "red.png")},
                {"id": "r2", "path": str(tmp_path / "red_copy.png")},
                {"id": "b1", "path": str(tmp_path / "blue.png")},
            ],
        )
        out = tmp_path / "i.ceb"
        code = main(
            ["--modality", "image", "--input", str(manifest), "--encoder", "fake",
             "--out", str(out)]
        )
        assert code == 0
        store = read_store(out)
        assert np.array_equal(store["r1"].raw, store["r2"].raw)
        assert not np.array_equal(store["r1"].raw, store["b1"].raw)

    def test_corrupt_image_skipped_with_partial_exit(self, tmp_path, capsys):
        make_image(tmp_path / "ok.png", (10, 120, 10))
        (tmp_path / "broken.png").write_bytes(b"this is not a png")
        manifest = tmp_path / "images.jsonl"
        write_jsonl(
            manifest,
            [
                {"id": "good", "path": str(tmp_path / "ok.png")},
                {"id": "bad", "path": str(tmp_path / "broken.png")},
            ],
        )
        out = tmp_path / "i.ceb"
        code = main(
            ["--modality", "image", "--input", str(manifest), "--encoder", "fake",
             "--out", str(out)]
        )
        assert code == 1
        assert "'bad'" in capsys.readouterr().err
        assert read_store(out).ids() == ["good"]

    def test_all_images_undecodable_exits_2(self, tmp_path):
        (tmp_path / "broken.png").write_bytes(b"nope")
        manifest = tmp_path / "images.jsonl"
        write_jsonl(manifest, [{"id": "bad", "path": str(tmp_path / "broken.png")}])
        code = main(
            ["--modality", "image", "--input", str(manifest), "--encoder", "fake",
             "--out", str(tmp_path / "i.ceb")]
        )
        assert code == 2


class TestPreprocessing:
    def test_output_shape_and_range(self):
        image = Image.new("RGB", (640, 360), (255, 255, 255))
        pixels = preprocess_image(image)
        assert pixels.shape == (3, 224, 224)
        # White maxes out each normalized channel at (1 - mean) / std.
        assert pixels[0].max() == pytest.approx((1 - 0.48145466) / 0.26862954, abs=1e-5)

    def test_small_images_upscale(self):
        image = Image.new("RGB", (50, 40), (0, 0, 0))
        assert preprocess_image(image).shape == (3, 224, 224)

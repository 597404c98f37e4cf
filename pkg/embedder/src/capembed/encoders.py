"""Encoders producing 512-D float32 vectors, plus image preprocessing.

Both encoders share one interface: `embed_texts(texts) -> (vectors,
truncated_flags)` and `embed_images(images) -> vectors`, with `dimension`
and `token_limit` attributes. The fake encoder is a deterministic
hash-seeded stand-in with no semantics; it exists so the CLI, the file
format, and the error contracts can be exercised without model weights.
"""

import hashlib

import numpy as np
from PIL import Image

from capembed import EmbedError

DIMENSION = 512
TOKEN_LIMIT = 77
IMAGE_SIZE = 224

# Channel statistics the pretrained encoder was trained with.
_MEAN = np.array([0.48145466, 0.4578275, 0.40821073], dtype=np.float32)
_STD = np.array([0.26862954, 0.26130258, 0.27577711], dtype=np.float32)


def preprocess_image(image: Image.Image) -> np.ndarray:
    """Resize shorter side to 224, center-crop 224, normalize; returns CHW float32."""
    image = image.convert("RGB")
    width, height = image.size
    scale = IMAGE_SIZE / min(width, height)
    resized = image.resize(
        (max(IMAGE_SIZE, round(width * scale)), max(IMAGE_SIZE, round(height * scale))),
        Image.BICUBIC,
    )
    left = (resized.width - IMAGE_SIZE) // 2
    top = (resized.height - IMAGE_SIZE) // 2
    cropped = resized.crop((left, top, left + IMAGE_SIZE, top + IMAGE_SIZE))
    pixels = np.asarray(cropped, dtype=np.float32) / 255.0
    pixels = (pixels - _MEAN) / _STD
    return pixels.transpose(2, 0, 1)


class FakeEncoder:
    """Deterministic stand-in encoder (sha256-seeded unit vectors)."""

    dimension = DIMENSION
    token_limit = TOKEN_LIMIT

    def _vector(self, payload: bytes) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")
        vec = np.random.default_rng(seed).standard_normal(self.dimension)
        return (vec / np.linalg.norm(vec)).astype(np.float32)

    def embed_texts(self, texts: list[str]):
        vectors = np.empty((len(texts), self.dimension), dtype=np.float32)
        truncated = []
        for i, text in enumerate(texts):
            tokens = text.split()
            was_truncated = len(tokens) > self.token_limit
            if was_truncated:
                text = " ".join(tokens[: self.token_limit])
            truncated.append(was_truncated)
            vectors[i] = self._vector(text.encode("utf-8"))
        return vectors, truncated

    def embed_images(self, images: list[Image.Image]) -> np.ndarray:
        vectors = np.empty((len(images), self.dimension), dtype=np.float32)
        for i, image in enumerate(images):
            # Hash the preprocessed pixels, not the file bytes, so identical
            # content embeds identically regardless of container metadata.
            vectors[i] = self._vector(preprocess_image(image).tobytes())
        return vectors


class ClipEncoder:
    """Pretrained two-tower encoder loaded from a local directory.

    Weights are never downloaded; point `model_dir` (or CAPEMBED_MODEL_DIR)
    at a checkout containing the standard config/tokenizer/weights files.
    Inference runs under no_grad, so outputs are deterministic for a given
    checkpoint and device.
    """

    dimension = DIMENSION

    def __init__(self, model_dir: str, device: str = "cpu", batch_size: int = 32):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EmbedError(
                "the real encoder needs the 'model' extra (torch, transformers); "
                f"import failed: {exc}"
            ) from None
        if batch_size < 1:
            raise EmbedError(f"batch size must be >= 1, got {batch_size}")
        self._torch = torch
        self.batch_size = batch_size
        self.device = device
        self.model = CLIPModel.from_pretrained(model_dir, local_files_only=True)
        self.model.to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_dir, local_files_only=True)
        self.token_limit = self.processor.tokenizer.model_max_length

    def _batches(self, items):
        for start in range(0, len(items), self.batch_size):
            yield items[start : start + self.batch_size]

    def embed_texts(self, texts: list[str]):
        tokenizer = self.processor.tokenizer
        truncated = [
            len(tokenizer(text, truncation=False)["input_ids"]) > self.token_limit
            for text in texts
        ]
        chunks = []
        with self._torch.no_grad():
            for batch in self._batches(texts):
                inputs = tokenizer(
                    batch, padding=True, truncation=True, return_tensors="pt"
                ).to(self.device)
                features = self.model.get_text_features(**inputs)
                chunks.append(features.cpu().numpy().astype(np.float32))
        return np.concatenate(chunks), truncated

    def embed_images(self, images: list[Image.Image]) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for batch in self._batches(images):
                inputs = self.processor(images=batch, return_tensors="pt").to(self.device)
                features = self.model.get_image_features(**inputs)
                chunks.append(features.cpu().numpy().astype(np.float32))
        return np.concatenate(chunks)

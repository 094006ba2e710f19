"""Image and text encoders behind a tiny registry.

Encoder ids are strings so configs stay declarative:

  * ``offline:<dim>`` / ``offline:<dim>:gray`` -- deterministic,
    dependency-free image features: 224x224 resize, an 8x8 grid of patch
    mean/std statistics plus channel histograms, pushed through a fixed
    seeded random projection. The gray variant drops color, which makes
    it blind to palette -- a stand-in for content-dominant encoders.
  * ``hf:<model>`` -- a pretrained vision tower via transformers, when
    the runtime and weights are available.
  * ``offline-text:<dim>`` -- hashing text encoder (unigrams + bigrams,
    77-token limit) for the description roles.
  * ``hf-text:<model>`` -- a pretrained text tower via transformers.

The offline encoders exist so the whole pipeline runs with no network
and no model downloads, byte-reproducibly.
"""

from __future__ import annotations

import re
import zlib
from typing import Sequence

import numpy as np
from PIL import Image

IMAGE_SIZE = 224
TEXT_TOKEN_LIMIT = 77
_GRID = 8
_HIST_BINS = 16


class EncoderLoadError(RuntimeError):
    """The requested encoder cannot be constructed in this environment."""


def _seed_from(name: str) -> int:
    return zlib.crc32(name.encode("utf-8")) & 0xFFFFFFFF


class OfflinePatchEncoder:
    """Deterministic image features from patch statistics."""

    def __init__(self, dim: int, grayscale: bool = False):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.grayscale = grayscale
        self.model_id = f"offline:{dim}:gray" if grayscale else f"offline:{dim}"
        channels = 1 if grayscale else 3
        raw = _GRID * _GRID * channels * 2 + channels * _HIST_BINS
        rng = np.random.default_rng(_seed_from(self.model_id))
        self._projection = rng.standard_normal((raw, dim)) / np.sqrt(raw)

    def _features(self, image: Image.Image) -> np.ndarray:
        img = image.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        if self.grayscale:
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.float64) / 255.0
        if arr.ndim == 2:
            arr = arr[:, :, None]
        patch = IMAGE_SIZE // _GRID
        blocks = arr.reshape(_GRID, patch, _GRID, patch, arr.shape[2])
        means = blocks.mean(axis=(1, 3))
        stds = blocks.std(axis=(1, 3))
        hists = [
            np.histogram(arr[:, :, ch], bins=_HIST_BINS, range=(0.0, 1.0))[0]
            / arr[:, :, ch].size
            for ch in range(arr.shape[2])
        ]
        return np.concatenate(
            [means.ravel(), stds.ravel(), np.concatenate(hists)]
        )

    def encode(self, images: Sequence[Image.Image]) -> np.ndarray:
        if not images:
            return np.zeros((0, self.dim), dtype=np.float32)
        feats = np.stack([self._features(img) for img in images])
        return (feats @ self._projection).astype(np.float32)


class HfImageEncoder:
    """Pretrained vision tower adapter (requires cached weights)."""

    def __init__(self, model_name: str, device: str = "cpu", batch_size: int = 16):
        try:
            import torch
            from transformers import AutoImageProcessor, AutoModel
        except ImportError as e:
            raise EncoderLoadError(f"transformers/torch unavailable: {e}") from e
        try:
            self._processor = AutoImageProcessor.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name).to(device).eval()
        except Exception as e:  # offline environments have no weights
            raise EncoderLoadError(f"cannot load {model_name!r}: {e}") from e
        self._torch = torch
        self._device = device
        self._batch = batch_size
        self.model_id = f"hf:{model_name}"
        with torch.no_grad():
            probe = self._embed([Image.new("RGB", (IMAGE_SIZE, IMAGE_SIZE))])
        self.dim = probe.shape[1]

    def _embed(self, images):
        inputs = self._processor(images=list(images), return_tensors="pt").to(self._device)
        out = self._model(**inputs)
        feats = getattr(out, "pooler_output", None)
        if feats is None:
            feats = out.last_hidden_state[:, 0]
        return feats.cpu().numpy()

    def encode(self, images: Sequence[Image.Image]) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for start in range(0, len(images), self._batch):
                chunks.append(self._embed(images[start : start + self._batch]))
        if not chunks:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.concatenate(chunks).astype(np.float32)


_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashingTextEncoder:
    """Feature-hashed bag of unigrams and bigrams; 77-token limit."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.model_id = f"offline-text:{dim}"

    def encode(self, texts: Sequence[str]) -> tuple[np.ndarray, list[bool]]:
        """Returns (vectors, truncated flag per text). Empty text -> zero row."""
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        truncated = []
        for i, text in enumerate(texts):
            tokens = _TOKEN_RE.findall(text.lower())
            truncated.append(len(tokens) > TEXT_TOKEN_LIMIT)
            tokens = tokens[:TEXT_TOKEN_LIMIT]
            grams = tokens + [f"{a}_{b}" for a, b in zip(tokens, tokens[1:])]
            for g in grams:
                h = zlib.crc32(g.encode("utf-8"))
                sign = 1.0 if (h >> 16) & 1 else -1.0
                out[i, h % self.dim] += sign
            norm = np.linalg.norm(out[i])
            if norm > 0:
                out[i] /= norm
        return out.astype(np.float32), truncated


class HfTextEncoder:
    """Pretrained text tower adapter (requires cached weights)."""

    def __init__(self, model_name: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as e:
            raise EncoderLoadError(f"transformers/torch unavailable: {e}") from e
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name).to(device).eval()
        except Exception as e:
            raise EncoderLoadError(f"cannot load {model_name!r}: {e}") from e
        self._torch = torch
        self._device = device
        self.model_id = f"hf-text:{model_name}"
        self.dim = int(self._model.config.hidden_size)

    def encode(self, texts: Sequence[str]) -> tuple[np.ndarray, list[bool]]:
        enc = self._tokenizer(
            list(texts), padding=True, truncation=True, return_tensors="pt"
        ).to(self._device)
        truncated = [
            len(self._tokenizer(t)["input_ids"]) > self._tokenizer.model_max_length
            for t in texts
        ]
        with self._torch.no_grad():
            out = self._model(**enc).last_hidden_state[:, 0]
        return out.cpu().numpy().astype(np.float32), truncated


def resolve_image_encoder(encoder_id: str, device: str = "cpu", batch_size: int = 16):
    if encoder_id.startswith("offline:"):
        parts = encoder_id.split(":")
        if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] != "gray"):
            raise EncoderLoadError(f"bad offline encoder id {encoder_id!r}")
        return OfflinePatchEncoder(int(parts[1]), grayscale=len(parts) == 3)
    if encoder_id.startswith("hf:"):
        return HfImageEncoder(encoder_id[3:], device=device, batch_size=batch_size)
    raise EncoderLoadError(f"unknown image encoder id {encoder_id!r}")


def resolve_text_encoder(encoder_id: str, device: str = "cpu"):
    if encoder_id.startswith("offline-text:"):
        return HashingTextEncoder(int(encoder_id.split(":")[1]))
    if encoder_id.startswith("hf-text:"):
        return HfTextEncoder(encoder_id[8:], device=device)
    raise EncoderLoadError(f"unknown text encoder id {encoder_id!r}")

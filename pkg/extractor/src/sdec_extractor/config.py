"""Extractor run configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

CAPTION_CLIENTS = ("template_fallback", "llm_api")


class ExtractorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractorConfig:
    image_dir: Path
    output_dir: Path
    encoder_b: str = "offline:256"
    encoder_c: str = "offline:192:gray"
    text_tower: str = "offline-text:256"
    caption_client: str = "template_fallback"
    api_base_url: str | None = None
    api_model: str | None = None
    batch_size: int = 16
    device: str = "cpu"
    labels_path: Path | None = None
    split_fractions: tuple[float, float, float] = (0.5, 0.3, 0.2)  # train/gallery/query
    seed: int = 0

    def __post_init__(self) -> None:
        if self.caption_client not in CAPTION_CLIENTS:
            raise ExtractorConfigError(
                f"caption_client must be one of {CAPTION_CLIENTS}, got {self.caption_client!r}"
            )
        if self.caption_client == "llm_api" and not (self.api_base_url and self.api_model):
            raise ExtractorConfigError("llm_api needs api.base_url and api.model")
        if self.batch_size < 1:
            raise ExtractorConfigError("batch_size must be positive")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ExtractorConfigError("split fractions must be non-negative and sum to 1")


def load_extractor_config(path: str | Path) -> ExtractorConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ExtractorConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ExtractorConfigError(f"config is not valid JSON: {e}")
    base = path.parent

    def respath(p):
        q = Path(p)
        return q if q.is_absolute() else base / q

    encoders = dict(raw.get("encoders", {}))
    api = dict(raw.get("api", {}))
    splits = raw.get("splits", {"train": 0.5, "gallery": 0.3, "query": 0.2})
    try:
        return ExtractorConfig(
            image_dir=respath(raw["image_dir"]),
            output_dir=respath(raw.get("output_dir", "extracted")),
            encoder_b=encoders.get("b", "offline:256"),
            encoder_c=encoders.get("c", "offline:192:gray"),
            text_tower=encoders.get("text", "offline-text:256"),
            caption_client=raw.get("caption_client", "template_fallback"),
            api_base_url=api.get("base_url"),
            api_model=api.get("model"),
            batch_size=int(raw.get("batch_size", 16)),
            device=str(raw.get("device", "cpu")),
            labels_path=respath(raw["labels"]) if raw.get("labels") else None,
            split_fractions=(
                float(splits.get("train", 0.5)),
                float(splits.get("gallery", 0.3)),
                float(splits.get("query", 0.2)),
            ),
            seed=int(raw.get("seed", 0)),
        )
    except KeyError as e:
        raise ExtractorConfigError(f"config is missing required key {e}")
    except (TypeError, ValueError) as e:
        raise ExtractorConfigError(str(e))

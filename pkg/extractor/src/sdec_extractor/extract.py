"""Extraction orchestration: images in, manifest + embedding files out.

Image ids are forward-slash relative paths under the image directory.
Labels come from an optional JSON sidecar (``{id: {"artist": ...,
"style": ...}}``) or from an ``<artist>/<style>/<file>`` directory
convention. Split assignment hashes the id with the config seed, so
reruns produce byte-identical outputs.
"""

from __future__ import annotations

import json
import logging
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .captions import Description, LlmApiClient, TemplateFallbackClient
from .config import ExtractorConfig
from .encoders import resolve_image_encoder, resolve_text_encoder
from .formats import write_embedding_file, write_manifest

log = logging.getLogger("sdec_extractor")

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}

ROLE_FILES = {
    "a": "role_a.sdec",
    "b": "role_b.sdec",
    "c": "role_c.sdec",
    "d": "role_d.sdec",
}


def scan_images(image_dir: Path) -> list[str]:
    """Relative POSIX paths of candidate images, sorted for determinism."""
    ids = [
        p.relative_to(image_dir).as_posix()
        for p in image_dir.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    ]
    return sorted(ids)


def infer_labels(
    ids: Sequence[str], labels_path: Path | None
) -> dict[str, tuple[str, str]]:
    if labels_path is not None:
        raw = json.loads(labels_path.read_text(encoding="utf-8"))
        labels = {}
        for id_ in ids:
            rec = raw.get(id_)
            if rec is None:
                raise ValueError(f"labels file has no entry for {id_!r}")
            labels[id_] = (str(rec["artist"]), str(rec["style"]))
        return labels
    labels = {}
    for id_ in ids:
        parts = id_.split("/")
        if len(parts) >= 3:
            labels[id_] = (parts[0], parts[1])
        elif len(parts) == 2:
            labels[id_] = (parts[0], "unknown_style")
        else:
            labels[id_] = ("unknown_artist", "unknown_style")
    return labels


def assign_splits(
    ids: Sequence[str], seed: int, fractions: tuple[float, float, float]
) -> dict[str, str]:
    """Deterministic quota split: hash-ordered ids, proportions enforced.

    Every split with a positive fraction gets at least one id whenever
    the corpus is large enough, so small fixtures stay usable.
    """
    order = sorted(ids, key=lambda i: (zlib.crc32(f"{seed}:{i}".encode("utf-8")), i))
    n = len(order)
    counts = [int(f * n) for f in fractions]
    while sum(counts) < n:  # leftovers go to the largest fraction
        counts[int(np.argmax(fractions))] += 1
    for i in range(3):
        if fractions[i] > 0 and counts[i] == 0:
            donor = int(np.argmax(counts))
            if counts[donor] > 1:
                counts[donor] -= 1
                counts[i] += 1
    out = {}
    names = ("train", "gallery", "query")
    pos = 0
    for name, count in zip(names, counts):
        for id_ in order[pos : pos + count]:
            out[id_] = name
        pos += count
    return out


def _load_image(path: Path) -> Image.Image | None:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError):
        return None


def decode_images(
    image_dir: Path, ids: Sequence[str]
) -> tuple[list[str], list[Image.Image], list[dict]]:
    """Decode every id; undecodable files go to the skip report."""
    kept_ids: list[str] = []
    images: list[Image.Image] = []
    skipped: list[dict] = []
    for id_ in ids:
        img = _load_image(image_dir / id_)
        if img is None:
            skipped.append({"id": id_, "reason": "undecodable image"})
            continue
        kept_ids.append(id_)
        images.append(img)
    return kept_ids, images, skipped


def extract_image_embeddings(
    config: ExtractorConfig, role: str, ids: Sequence[str] | None = None
) -> tuple[Path, list[dict]]:
    """Encode every decodable image for role ``b`` or ``c``."""
    if role not in ("b", "c"):
        raise ValueError(f"role must be 'b' or 'c', got {role!r}")
    encoder_id = config.encoder_b if role == "b" else config.encoder_c
    encoder = resolve_image_encoder(encoder_id, config.device, config.batch_size)
    all_ids = list(ids) if ids is not None else scan_images(config.image_dir)
    kept, images, skipped = decode_images(config.image_dir, all_ids)

    rows = []
    for start in range(0, len(images), config.batch_size):
        rows.append(encoder.encode(images[start : start + config.batch_size]))
    data = (
        np.concatenate(rows)
        if rows
        else np.zeros((0, encoder.dim), dtype=np.float32)
    )
    out = config.output_dir / ROLE_FILES[role]
    write_embedding_file(out, encoder.model_id, kept, data)
    log.info("role %s: %d rows (dim %d), %d skipped", role, len(kept), encoder.dim, len(skipped))
    return out, skipped


def generate_descriptions(
    config: ExtractorConfig,
    ids: Sequence[str],
    labels: dict[str, tuple[str, str]],
    transport=None,
    sleeper=None,
) -> Path:
    """JSONL of {id, style_text, content_text} via the configured client."""
    fallback = TemplateFallbackClient(labels)
    if config.caption_client == "template_fallback":
        descriptions = fallback.describe(ids)
    else:
        kwargs = {}
        if transport is not None:
            kwargs["transport"] = transport
        if sleeper is not None:
            kwargs["sleeper"] = sleeper
        client = LlmApiClient(
            base_url=config.api_base_url,
            model=config.api_model,
            fallback=fallback,
            image_root=config.image_dir,
            **kwargs,
        )
        try:
            descriptions = client.describe(ids)
        finally:
            client.close()
    out = config.output_dir / "descriptions.jsonl"
    with open(out, "w", encoding="utf-8") as fh:
        for d in descriptions:
            fh.write(
                json.dumps(
                    {"id": d.id, "style_text": d.style_text, "content_text": d.content_text}
                )
                + "\n"
            )
    return out


def read_descriptions(path: Path) -> list[Description]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(Description(obj["id"], obj["style_text"], obj["content_text"]))
    return out


def encode_texts(
    config: ExtractorConfig, descriptions: Sequence[Description]
) -> tuple[Path, Path, list[dict]]:
    """Embed style and content texts into role a and d files."""
    tower = resolve_text_encoder(config.text_tower, config.device)
    report: list[dict] = []
    kept = [d for d in descriptions if d.style_text.strip() and d.content_text.strip()]
    for d in descriptions:
        if not d.style_text.strip() or not d.content_text.strip():
            report.append({"id": d.id, "reason": "empty description"})
    ids = [d.id for d in kept]
    style_vecs, style_trunc = tower.encode([d.style_text for d in kept])
    content_vecs, content_trunc = tower.encode([d.content_text for d in kept])
    for d, ts, tc in zip(kept, style_trunc, content_trunc):
        if ts or tc:
            report.append({"id": d.id, "reason": "text truncated to token limit"})
    out_a = config.output_dir / ROLE_FILES["a"]
    out_d = config.output_dir / ROLE_FILES["d"]
    write_embedding_file(out_a, tower.model_id, ids, style_vecs)
    write_embedding_file(out_d, tower.model_id, ids, content_vecs)
    return out_a, out_d, report


def run_extract(
    config: ExtractorConfig,
    roles: Sequence[str] = ("a", "b", "c", "d"),
    transport=None,
    sleeper=None,
) -> dict:
    """Full extraction: manifest, image roles, text roles, run config.

    Also writes a ready-to-run config for the downstream pipeline CLI so
    ``pipeline --config <output>/pipeline_config.json`` works directly.
    """
    roles = sorted(set(roles))
    unknown = set(roles) - set(ROLE_FILES)
    if unknown:
        raise ValueError(f"unknown roles {sorted(unknown)}")
    config.output_dir.mkdir(parents=True, exist_ok=True)

    all_ids = scan_images(config.image_dir)
    if not all_ids:
        raise ValueError(f"no images found under {config.image_dir}")
    labels = infer_labels(all_ids, config.labels_path)

    skipped: list[dict] = []
    emitted: dict[str, str] = {}

    decodable, _, decode_skips = decode_images(config.image_dir, all_ids)
    skipped.extend(decode_skips)

    splits = assign_splits(decodable, config.seed, config.split_fractions)
    manifest_records = [
        {
            "id": id_,
            "artist": labels[id_][0],
            "style": labels[id_][1],
            "split": splits[id_],
        }
        for id_ in decodable
    ]
    manifest_path = config.output_dir / "manifest.jsonl"
    write_manifest(manifest_path, manifest_records)

    for role in ("b", "c"):
        if role in roles:
            path, _ = extract_image_embeddings(config, role, decodable)
            emitted[role] = path.name

    if "a" in roles or "d" in roles:
        desc_path = generate_descriptions(
            config, decodable, labels, transport=transport, sleeper=sleeper
        )
        out_a, out_d, text_report = encode_texts(config, read_descriptions(desc_path))
        skipped.extend(text_report)
        if "a" in roles:
            emitted["a"] = out_a.name
        if "d" in roles:
            emitted["d"] = out_d.name

    (config.output_dir / "skipped.json").write_text(
        json.dumps(skipped, indent=2) + "\n", encoding="utf-8"
    )
    pipeline_config = {
        "config_version": 1,
        "manifest": manifest_path.name,
        "embeddings": emitted,
        "alignment": {"learning_rate": 0.3, "epochs": 150, "batch_size": 4096},
        "decouple": {"clamp_alpha": False, "use_text": "a" in emitted or "d" in emitted},
        "relevance": {"label_field": "artist"},
        "ks": [1, 5, 10],
        "seed": config.seed,
        "output_dir": "pipeline_out",
    }
    (config.output_dir / "pipeline_config.json").write_text(
        json.dumps(pipeline_config, indent=2) + "\n", encoding="utf-8"
    )
    return {
        "n_images": len(all_ids),
        "n_encoded": len(decodable),
        "n_skipped": len(skipped),
        "roles": emitted,
        "manifest": str(manifest_path),
        "pipeline_config": str(config.output_dir / "pipeline_config.json"),
    }

"""Writers for the sdec wire formats.

The binary embedding container and the JSONL manifest are the only
boundary between the extractor and the downstream toolkit; this module
implements them from the format description directly and deliberately
does not import the consumer package.

Layout (little-endian): magic "SDEC" | version u16 = 1 | dim u32 |
count u64 | model_id u16-length + UTF-8 | id table count x (u16-length +
UTF-8) | count x dim float32 row-major | CRC32 of all preceding bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"SDEC"
VERSION = 1


def write_embedding_file(
    path: str | Path,
    model_id: str,
    ids: Sequence[str],
    data: np.ndarray,
) -> None:
    """Serialize one embedding set; deterministic for identical inputs."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2 or data.shape[0] != len(ids):
        raise ValueError(f"data shape {data.shape} does not match {len(ids)} ids")
    if data.shape[1] < 1:
        raise ValueError("embedding dimension must be positive")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    if not all(ids):
        raise ValueError("ids must be non-empty")
    if data.size and not np.isfinite(data).all():
        raise ValueError("embeddings contain NaN or Inf")

    parts = [MAGIC, struct.pack("<HIQ", VERSION, data.shape[1], len(ids))]
    model_bytes = model_id.encode("utf-8")
    parts.append(struct.pack("<H", len(model_bytes)))
    parts.append(model_bytes)
    for id_ in ids:
        raw = id_.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"id too long: {id_[:40]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(data.tobytes(order="C"))
    payload = b"".join(parts)
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def write_manifest(
    path: str | Path,
    records: Sequence[dict],
) -> None:
    """JSONL manifest: id, artist, style, split (+ optional human_score)."""
    allowed = {"id", "artist", "style", "split", "human_score"}
    seen: set[str] = set()
    lines = []
    for rec in records:
        extra = set(rec) - allowed
        if extra:
            raise ValueError(f"unknown manifest fields {sorted(extra)} for {rec.get('id')}")
        if rec["id"] in seen:
            raise ValueError(f"duplicate manifest id {rec['id']!r}")
        seen.add(rec["id"])
        lines.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

"""Embedding file format, dataset manifest, and role-keyed joins.

The on-disk embedding format is a little-endian binary container:

    magic "SDEC" | version u16 | dim u32 | count u64
    | model_id: u16 length + UTF-8 bytes
    | id table: count x (u16 length + UTF-8 bytes)
    | data: count x dim float32, row-major
    | CRC32 (u32) of all preceding bytes

Writes are deterministic: the same set always produces byte-identical
files. Loaded sets are validated and frozen, so they are safe to share
across worker threads.
"""

from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MAGIC = b"SDEC"
FORMAT_VERSION = 1

VALID_SPLITS = ("query", "gallery", "train")


class EmbeddingFormatError(ValueError):
    """Structurally invalid embedding file (magic, version, CRC, layout)."""


class TruncatedFileError(EmbeddingFormatError):
    """File ends before the declared payload does."""


class ManifestError(ValueError):
    """Invalid manifest content; message carries the offending line number."""


class FeatureRole(str, enum.Enum):
    """The four embedding roles a decouple run can bind.

    ``style_text`` and ``content_text`` are text-tower embeddings of style
    and content descriptions; ``image_multimodal`` is the image embedding
    from the image-text encoder; ``content_unimodal`` is the image
    embedding from the augmentation-trained (content-dominant) encoder.
    """

    STYLE_TEXT = "a"
    IMAGE_MULTIMODAL = "b"
    CONTENT_UNIMODAL = "c"
    CONTENT_TEXT = "d"


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Id-indexed matrix of float32 vectors from one encoder.

    Invariants (enforced at construction): ids are unique, non-empty
    strings; ``data`` has shape ``(len(ids), dim)`` with every entry
    finite; ``dim`` is positive.
    """

    model_id: str
    dim: int
    ids: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "ids", tuple(self.ids))
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if arr.ndim != 2 or arr.shape != (len(self.ids), self.dim):
            raise ValueError(
                f"data shape {arr.shape} does not match "
                f"(count={len(self.ids)}, dim={self.dim})"
            )
        if not all(isinstance(i, str) and i for i in self.ids):
            raise ValueError("ids must be non-empty strings")
        if len(set(self.ids)) != len(self.ids):
            dupes = sorted({i for i in self.ids if self.ids.count(i) > 1})
            raise ValueError(f"duplicate ids: {dupes[:5]}")
        if arr.size and not np.isfinite(arr).all():
            raise ValueError("data contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, id_: str) -> np.ndarray:
        return self.data[self.index()[id_]]

    def index(self) -> dict[str, int]:
        idx = getattr(self, "_index", None)
        if idx is None:
            idx = {i: n for n, i in enumerate(self.ids)}
            object.__setattr__(self, "_index", idx)
        return idx


@dataclass(frozen=True)
class ManifestRecord:
    """Per-image metadata: labels, evaluation split, optional rating."""

    id: str
    artist: str
    style: str
    split: str
    human_score: float | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("record id must be non-empty")
        if self.split not in VALID_SPLITS:
            raise ValueError(f"split must be one of {VALID_SPLITS}, got {self.split!r}")
        if self.human_score is not None and not (1.0 <= self.human_score <= 5.0):
            raise ValueError(f"human_score {self.human_score} outside [1, 5]")


def write_embedding_set(emb: EmbeddingSet, path: str | Path) -> None:
    """Serialize ``emb`` to ``path``; byte-exact and deterministic.

    Invariants are re-checked before any bytes are written, so an invalid
    set never leaves a partial file behind.
    """
    # Re-validate: the dataclass is frozen but the caller may have built it
    # through object.__setattr__ games; also guards future refactors.
    EmbeddingSet(emb.model_id, emb.dim, emb.ids, emb.data)

    parts = [MAGIC, struct.pack("<HIQ", FORMAT_VERSION, emb.dim, len(emb.ids))]
    model_bytes = emb.model_id.encode("utf-8")
    if len(model_bytes) > 0xFFFF:
        raise ValueError("model_id longer than 65535 UTF-8 bytes")
    parts.append(struct.pack("<H", len(model_bytes)))
    parts.append(model_bytes)
    for id_ in emb.ids:
        raw = id_.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"id longer than 65535 UTF-8 bytes: {id_[:32]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(emb.data, dtype="<f4").tobytes(order="C"))
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(payload + struct.pack("<I", crc))


class _Cursor:
    """Sequential reader that raises descriptive truncation errors."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise TruncatedFileError(
                f"truncated file while reading {what}: expected at least "
                f"{end} bytes, file has {len(self.buf)}"
            )
        out = self.buf[self.pos : end]
        self.pos = end
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_embedding_set(path: str | Path) -> EmbeddingSet:
    """Load and validate an embedding file written by write_embedding_set."""
    buf = Path(path).read_bytes()
    cur = _Cursor(buf)

    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise EmbeddingFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = cur.unpack("<H", "version")
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(
            f"unsupported format version {version}, expected {FORMAT_VERSION}"
        )
    dim, count = cur.unpack("<IQ", "dim/count")
    (model_len,) = cur.unpack("<H", "model_id length")
    try:
        model_id = cur.take(model_len, "model_id").decode("utf-8")
    except UnicodeDecodeError as e:
        raise EmbeddingFormatError(f"model_id is not valid UTF-8: {e}") from e

    ids: list[str] = []
    for n in range(count):
        (id_len,) = cur.unpack("<H", f"id[{n}] length")
        try:
            ids.append(cur.take(id_len, f"id[{n}]").decode("utf-8"))
        except UnicodeDecodeError as e:
            raise EmbeddingFormatError(f"id[{n}] is not valid UTF-8: {e}") from e

    data_bytes = cur.take(count * dim * 4, "embedding data")
    (stored_crc,) = cur.unpack("<I", "CRC32")
    if cur.pos != len(buf):
        raise EmbeddingFormatError(
            f"{len(buf) - cur.pos} unexpected trailing bytes after CRC"
        )
    actual_crc = zlib.crc32(buf[: len(buf) - 4]) & 0xFFFFFFFF
    if actual_crc != stored_crc:
        raise EmbeddingFormatError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )

    data = np.frombuffer(data_bytes, dtype="<f4").reshape(count, dim).astype(np.float32)
    try:
        return EmbeddingSet(model_id=model_id, dim=int(dim), ids=tuple(ids), data=data)
    except ValueError as e:
        raise EmbeddingFormatError(f"file decodes to an invalid set: {e}") from e


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    """Parse a JSONL manifest; order preserved, duplicates rejected.

    Allowed fields are exactly ``id``, ``artist``, ``style``, ``split``
    and the optional ``human_score``. Errors name the 1-based line.
    """
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"line {lineno}: invalid JSON ({e.msg})") from e
            if not isinstance(obj, dict):
                raise ManifestError(f"line {lineno}: record must be a JSON object")
            unknown = set(obj) - {"id", "artist", "style", "split", "human_score"}
            if unknown:
                raise ManifestError(
                    f"line {lineno}: unknown fields {sorted(unknown)}"
                )
            missing = {"id", "artist", "style", "split"} - set(obj)
            if missing:
                raise ManifestError(f"line {lineno}: missing fields {sorted(missing)}")
            score = obj.get("human_score")
            if score is not None and not isinstance(score, (int, float)):
                raise ManifestError(f"line {lineno}: human_score must be a number")
            try:
                rec = ManifestRecord(
                    id=str(obj["id"]),
                    artist=str(obj["artist"]),
                    style=str(obj["style"]),
                    split=str(obj["split"]),
                    human_score=None if score is None else float(score),
                )
            except ValueError as e:
                raise ManifestError(f"line {lineno}: {e}") from e
            if rec.id in seen:
                raise ManifestError(f"line {lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


@dataclass
class JoinedTable:
    """Per-id rows joining manifest records with every bound role's vector.

    ``records`` keeps manifest order and contains only ids present in all
    bound sets; ids absent from some role are listed in ``missing`` rather
    than silently dropped.
    """

    records: list[ManifestRecord]
    vectors: dict[FeatureRole, np.ndarray]
    missing: dict[FeatureRole, list[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> "JoinedTable":
        """Restrict the table to one manifest split."""
        keep = [n for n, r in enumerate(self.records) if r.split == name]
        return JoinedTable(
            records=[self.records[n] for n in keep],
            vectors={role: mat[keep] for role, mat in self.vectors.items()},
            missing=self.missing,
        )


def align_sets(
    sets: Mapping[FeatureRole, EmbeddingSet],
    manifest: Sequence[ManifestRecord],
) -> JoinedTable:
    """Join manifest records with vectors from every bound role.

    Raises FusionDimensionError when roles destined for the same vector
    space disagree on dimension: style_text/content_text must match
    image_multimodal (they fuse with it, directly or after alignment).
    The unimodal role may have its own dimension; the alignment head
    bridges it.
    """
    if not sets:
        raise ValueError("no embedding sets bound")

    b = sets.get(FeatureRole.IMAGE_MULTIMODAL)
    for role in (FeatureRole.STYLE_TEXT, FeatureRole.CONTENT_TEXT):
        other = sets.get(role)
        if b is not None and other is not None and other.dim != b.dim:
            raise FusionDimensionError(role, other.dim, b.dim)

    indexes = {role: s.index() for role, s in sets.items()}
    missing: dict[FeatureRole, list[str]] = {role: [] for role in sets}
    kept: list[ManifestRecord] = []
    rows: dict[FeatureRole, list[int]] = {role: [] for role in sets}
    for rec in manifest:
        absent = [role for role, idx in indexes.items() if rec.id not in idx]
        for role in absent:
            missing[role].append(rec.id)
        if absent:
            continue
        kept.append(rec)
        for role, idx in indexes.items():
            rows[role].append(idx[rec.id])

    vectors = {
        role: sets[role].data[rows[role]] if kept else sets[role].data[:0]
        for role in sets
    }
    return JoinedTable(
        records=kept,
        vectors=vectors,
        missing={role: lst for role, lst in missing.items() if lst},
    )


class FusionDimensionError(ValueError):
    def __init__(self, role: FeatureRole, dim: int, expected: int):
        self.role = role
        self.dim = dim
        self.expected = expected
        super().__init__(
            f"role {role.value!r} has dim {dim} but role 'b' has dim {expected}; "
            "roles fused into the multimodal space must share its dimension"
        )

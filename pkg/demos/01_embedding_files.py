"""Walkthrough: the binary embedding container and the JSONL manifest.

Creates a small embedding set, writes it to disk, inspects the bytes,
and shows what the loader rejects.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from sdec import EmbeddingSet, load_embedding_set, load_manifest, write_embedding_set

workdir = Path(tempfile.mkdtemp(prefix="sdec_demo_"))
print(f"working in {workdir}\n")

# ─── write a set ───
rng = np.random.default_rng(0)
emb = EmbeddingSet(
    model_id="demo-encoder",
    dim=4,
    ids=("starry_night.jpg", "water_lilies.jpg", "guernica.jpg"),
    data=rng.standard_normal((3, 4)).astype(np.float32),
)
path = workdir / "demo.sdec"
write_embedding_set(emb, path)
raw = path.read_bytes()
print(f"wrote {len(raw)} bytes; magic={raw[:4]!r}")

# ─── read it back: bit-exact ───
back = load_embedding_set(path)
assert back.data.tobytes() == emb.data.tobytes()
print(f"roundtrip ok: model_id={back.model_id!r}, {len(back)} rows, dim={back.dim}")

# ─── the loader validates everything ───
corrupt = bytearray(raw)
corrupt[-1] ^= 0xFF  # break the trailing CRC32
(workdir / "broken.sdec").write_bytes(bytes(corrupt))
try:
    load_embedding_set(workdir / "broken.sdec")
except ValueError as e:
    print(f"corrupted file rejected: {e}")

# ─── manifests: one JSON record per line ───
manifest_path = workdir / "manifest.jsonl"
records = [
    {"id": "starry_night.jpg", "artist": "van_gogh", "style": "post_impressionism", "split": "gallery"},
    {"id": "water_lilies.jpg", "artist": "monet", "style": "impressionism", "split": "gallery", "human_score": 4.5},
    {"id": "guernica.jpg", "artist": "picasso", "style": "cubism", "split": "query"},
]
manifest_path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
for rec in load_manifest(manifest_path):
    print(f"  {rec.id:22s} artist={rec.artist:10s} split={rec.split:8s} score={rec.human_score}")

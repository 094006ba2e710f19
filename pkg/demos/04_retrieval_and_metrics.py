"""Walkthrough: exact cosine retrieval and the evaluation metrics."""

import numpy as np

from sdec import (
    EmbeddingSet,
    ManifestRecord,
    RelevanceSpec,
    adjusted_rand_index,
    batch_retrieve,
    build_index,
    clustering_accuracy,
    evaluate_retrieval,
    kmeans,
    spearman_rho,
)

rng = np.random.default_rng(4)

# ─── a gallery with three artists, two items each near a prototype ───
artists = ["rembrandt", "vermeer", "hokusai"]
protos = {a: rng.standard_normal(8) for a in artists}
ids, rows, manifest = [], [], []
for a in artists:
    for j in range(4):
        ids.append(f"{a}_{j}")
        rows.append(protos[a] + 0.4 * rng.standard_normal(8))
        manifest.append(ManifestRecord(f"{a}_{j}", a, "oil", "gallery"))
gallery = EmbeddingSet("demo", 8, tuple(ids), np.array(rows, dtype=np.float32))

queries_ids, q_rows = [], []
for i, a in enumerate(artists):
    queries_ids.append(f"query_{a}")
    q_rows.append(protos[a] + 0.4 * rng.standard_normal(8))
    manifest.append(ManifestRecord(f"query_{a}", a, "oil", "query"))
queries = EmbeddingSet("demo", 8, tuple(queries_ids), np.array(q_rows, dtype=np.float32))

index = build_index(gallery)
for ranked in batch_retrieve(index, queries, k=3):
    hits = ", ".join(f"{g} ({s:+.3f})" for g, s in ranked.hits)
    print(f"{ranked.query_id:16s} -> {hits}")

report = evaluate_retrieval(index, queries, manifest, RelevanceSpec("artist"), ks=[1, 3])
print("\nretrieval metrics:", {k: round(v, 4) for k, v in report.metrics.items()})

# ─── clustering the gallery back into artists ───
assignments, _, inertia = kmeans(gallery.data, k=3, seed=0)
truth = [ids[i].rsplit("_", 1)[0] for i in range(len(ids))]
print(f"\nkmeans inertia {inertia:.3f}")
print(f"clustering accuracy (best matching): {clustering_accuracy(assignments, truth):.3f}")
print(f"adjusted rand index:                 {adjusted_rand_index(assignments, truth):.3f}")

# ─── rank correlation with ties ───
human = [4.5, 3.0, 3.0, 2.0, 5.0]
model = [4.2, 3.1, 2.8, 1.9, 4.9]
print(f"\nspearman rho (human vs model scores): {spearman_rho(model, human):.4f}")

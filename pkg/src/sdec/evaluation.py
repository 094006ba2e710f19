"""Retrieval, clustering, and rating-alignment metrics.

Retrieval metrics follow the usual instance-retrieval conventions:
AP@k is precision-weighted over the top k with denominator
min(|relevant|, k), and R@k is the fraction of queries with at least one
relevant hit in the top k. Clustering accuracy is the exact best
one-to-one cluster/label matching (Hungarian assignment on the
contingency table); ARI is the standard chance-corrected pair-counting
index. Spearman's rho uses average ranks for ties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .retrieval import RankedList, RetrievalIndex, batch_retrieve
from .store import EmbeddingSet, ManifestRecord

LABEL_FIELDS = ("artist", "style")


@dataclass(frozen=True)
class RelevanceSpec:
    """What counts as a relevant gallery item, and which queries to score.

    ``label_field`` names the manifest label shared between a query and
    its relevant gallery items. ``label_filter``, when set, restricts
    evaluation to queries whose *style* equals the filter value (the
    per-style breakdown columns of the retrieval protocol).
    """

    label_field: str = "artist"
    label_filter: str | None = None

    def __post_init__(self) -> None:
        if self.label_field not in LABEL_FIELDS:
            raise ValueError(f"label_field must be one of {LABEL_FIELDS}")


@dataclass
class MetricsReport:
    """Metric-name -> value map plus run metadata (hashes, counts)."""

    metrics: dict[str, float] = field(default_factory=dict)
    metadata: dict[str, object] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"metrics": self.metrics, "metadata": self.metadata},
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        obj = json.loads(text)
        return cls(metrics=dict(obj["metrics"]), metadata=dict(obj["metadata"]))


def average_precision_at_k(hits: RankedList, relevant: set[str], k: int) -> float:
    """AP@k = sum_{i<=k} P(i) * rel(i) / min(|relevant|, k)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    found = 0
    score = 0.0
    for rank, (gid, _) in enumerate(hits.hits[:k], start=1):
        if gid in relevant:
            found += 1
            score += found / rank
    return score / min(len(relevant), k)


def recall_at_k(
    hits: RankedList, relevant: set[str], k: int, proportional: bool = False
) -> float:
    """1 iff at least one relevant id appears in the top k.

    With ``proportional`` the fraction of the relevant set found in the
    top k is returned instead of the hit indicator.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    found = sum(1 for gid, _ in hits.hits[:k] if gid in relevant)
    if proportional:
        return found / len(relevant)
    return int(found > 0)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    d2 = np.maximum(((x - centers[0]) ** 2).sum(axis=1), 0.0)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _sq_dists(x: np.ndarray, centers: np.ndarray, x_sq: np.ndarray) -> np.ndarray:
    # |x - c|^2 via the expanded form; clip the tiny negatives it can produce
    d2 = x_sq[:, None] + (centers * centers).sum(axis=1)[None, :] - 2.0 * (x @ centers.T)
    return np.maximum(d2, 0.0)


def kmeans_single(
    x: np.ndarray, centers: np.ndarray, max_iter: int, tol: float
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """One Lloyd run from given centers; also returns the inertia trace."""
    x = np.asarray(x, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64)
    k = centers.shape[0]
    x_sq = (x * x).sum(axis=1)
    history: list[float] = []
    for _ in range(max_iter):
        d2 = _sq_dists(x, centers, x_sq)
        assign = d2.argmin(axis=1)
        point_d2 = d2[np.arange(x.shape[0]), assign]
        history.append(float(point_d2.sum()))
        new_centers = centers.copy()
        for j in range(k):
            members = assign == j
            if members.any():
                new_centers[j] = x[members].mean(axis=0)
        # re-seed empty clusters from the points farthest off their centers
        empty = [j for j in range(k) if not (assign == j).any()]
        if empty:
            order = np.argsort(-point_d2)
            for slot, j in enumerate(empty):
                new_centers[j] = x[order[slot]]
        shift = np.linalg.norm(new_centers - centers, axis=1).max()
        centers = new_centers
        if shift < tol and not empty:
            break
    d2 = _sq_dists(x, centers, x_sq)
    assign = d2.argmin(axis=1)
    inertia = float(d2[np.arange(x.shape[0]), assign].sum())
    history.append(inertia)
    return assign, centers, inertia, history


def kmeans(
    x: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 300,
    tol: float = 1e-6,
    n_restarts: int = 10,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Seeded k-means++ / Lloyd clustering; best of ``n_restarts`` runs.

    Deterministic for a fixed seed: restart generators are spawned from
    one seed sequence and the winner is chosen by (inertia, restart index).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must be 2-D")
    if not np.isfinite(x).all():
        raise ValueError("x must be finite")
    if k < 1 or k > x.shape[0]:
        raise ValueError(f"k must lie in [1, {x.shape[0]}], got {k}")
    best: tuple[float, int, np.ndarray, np.ndarray] | None = None
    children = np.random.SeedSequence(seed).spawn(n_restarts)
    for r in range(n_restarts):
        rng = np.random.default_rng(children[r])
        centers0 = _kmeans_pp_init(x, k, rng)
        assign, centers, inertia, _ = kmeans_single(x, centers0, max_iter, tol)
        if best is None or inertia < best[0]:
            best = (inertia, r, assign, centers)
    assert best is not None
    return best[2], best[3], best[0]


def _as_int_labels(values: Sequence) -> np.ndarray:
    _, inv = np.unique(np.asarray(values), return_inverse=True)
    return inv


def clustering_accuracy(pred: Sequence, truth: Sequence) -> float:
    """Best one-to-one cluster/label matching agreement, in [0, 1].

    Exact: Hungarian assignment on the negated contingency table, padded
    square when the number of clusters differs from the number of labels.
    """
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(truth)}")
    if len(pred) == 0:
        raise ValueError("empty inputs")
    p = _as_int_labels(pred)
    t = _as_int_labels(truth)
    side = max(p.max(), t.max()) + 1
    contingency = np.zeros((side, side), dtype=np.int64)
    np.add.at(contingency, (p, t), 1)
    rows, cols = linear_sum_assignment(-contingency)
    return float(contingency[rows, cols].sum()) / len(pred)


def adjusted_rand_index(pred: Sequence, truth: Sequence) -> float:
    """Chance-corrected pairwise partition agreement, in [-1, 1]."""
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(truth)}")
    n = len(pred)
    if n < 2:
        raise ValueError("need at least 2 items")
    p = _as_int_labels(pred)
    t = _as_int_labels(truth)
    contingency = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(contingency, (p, t), 1)

    def comb2(v: np.ndarray) -> int:
        v = v.astype(object)  # exact integer arithmetic
        return int((v * (v - 1) // 2).sum())

    sum_cells = comb2(contingency.ravel())
    sum_a = comb2(contingency.sum(axis=1))
    sum_b = comb2(contingency.sum(axis=0))
    total = n * (n - 1) // 2
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0  # both partitions degenerate in the same way
    return float((sum_cells - expected) / (max_index - expected))


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1  # average of 1-based positions
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average-rank vectors; ties share mean rank."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D of equal length")
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = (dx * dx).sum()
    vy = (dy * dy).sum()
    if vx == 0 or vy == 0:
        raise ValueError("rank variance is zero; correlation undefined")
    return float((dx * dy).sum() / np.sqrt(vx * vy))


def style_score(generated: np.ndarray, reference: np.ndarray) -> float:
    """Map cosine similarity of two unit style vectors onto the [1, 5] scale."""
    generated = np.asarray(generated, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    for name, v in (("generated", generated), ("reference", reference)):
        if abs(np.linalg.norm(v) - 1.0) > 1e-4:
            raise ValueError(f"{name} vector must be unit-norm")
    cos = float(np.clip(np.dot(generated, reference), -1.0, 1.0))
    return 1.0 + 4.0 * (cos + 1.0) / 2.0


def evaluate_retrieval(
    index: RetrievalIndex,
    queries: EmbeddingSet,
    manifest: Sequence[ManifestRecord],
    spec: RelevanceSpec,
    ks: Iterable[int],
    allow_self_match: bool = False,
) -> MetricsReport:
    """mAP@k / R@k over all queries, relevance defined by a shared label.

    Queries with no relevant gallery item are skipped and counted in the
    report metadata rather than dragging the means down.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("ks must contain positive integers")
    by_id: Mapping[str, ManifestRecord] = {r.id: r for r in manifest}
    missing = [i for i in list(queries.ids) + list(index.ids) if i not in by_id]
    if missing:
        raise ValueError(f"ids without manifest records: {missing[:5]}")

    def label(i: str) -> str:
        return getattr(by_id[i], spec.label_field)

    keep = list(range(len(queries.ids)))
    if spec.label_filter is not None:
        keep = [i for i in keep if by_id[queries.ids[i]].style == spec.label_filter]
        if not keep:
            raise ValueError(
                f"label_filter {spec.label_filter!r} matches no query"
            )
    filtered = EmbeddingSet(
        model_id=queries.model_id,
        dim=queries.dim,
        ids=tuple(queries.ids[i] for i in keep),
        data=queries.data[keep],
    )

    gallery_by_label: dict[str, set[str]] = {}
    for gid in index.ids:
        gallery_by_label.setdefault(label(gid), set()).add(gid)

    ranked = batch_retrieve(index, filtered, max(ks), allow_self_match=allow_self_match)
    ap_sums = {k: 0.0 for k in ks}
    r_sums = {k: 0 for k in ks}
    evaluated = 0
    skipped = 0
    for rl in ranked:
        relevant = set(gallery_by_label.get(label(rl.query_id), set()))
        if not allow_self_match:
            relevant.discard(rl.query_id)
        if not relevant:
            skipped += 1
            continue
        evaluated += 1
        for k in ks:
            ap_sums[k] += average_precision_at_k(rl, relevant, k)
            r_sums[k] += recall_at_k(rl, relevant, k)
    if evaluated == 0:
        raise ValueError("no query has a relevant gallery item")

    metrics = {f"mAP@{k}": ap_sums[k] / evaluated for k in ks}
    metrics.update({f"R@{k}": r_sums[k] / evaluated for k in ks})
    return MetricsReport(
        metrics=metrics,
        metadata={
            "label_field": spec.label_field,
            "label_filter": spec.label_filter,
            "n_queries": len(filtered.ids),
            "n_queries_evaluated": evaluated,
            "n_queries_without_relevant": skipped,
            "n_gallery": len(index.ids),
            "allow_self_match": allow_self_match,
        },
    )

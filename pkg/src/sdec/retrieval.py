"""Exact cosine nearest-neighbor search over an in-memory gallery.

No approximation: every query is scored against every gallery row and
ranked by (score descending, gallery id ascending), so results are
reproducible across platforms and worker counts. Scores are computed in
float64 regardless of storage precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .store import EmbeddingSet

_ZERO_EPS = 1e-12
_QUERY_BLOCK = 1024


@dataclass(frozen=True)
class RankedList:
    """Hits for one query: (gallery_id, cosine score), best first."""

    query_id: str
    hits: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class RetrievalIndex:
    """Unit-normalized gallery matrix plus the tie-breaking id order."""

    ids: tuple[str, ...]
    matrix: np.ndarray  # float64, rows unit-norm
    id_rank: np.ndarray  # rank of each row in ascending-id order

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


def build_index(gallery: EmbeddingSet) -> RetrievalIndex:
    """Normalize gallery rows; rejects zero rows naming the offending id."""
    mat = np.asarray(gallery.data, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    bad = np.flatnonzero(norms < _ZERO_EPS)
    if bad.size:
        raise ValueError(
            f"gallery rows with zero norm: {[gallery.ids[i] for i in bad[:5]]}"
        )
    mat = mat / norms[:, None]
    mat.setflags(write=False)
    order = sorted(range(len(gallery.ids)), key=lambda i: gallery.ids[i])
    id_rank = np.empty(len(order), dtype=np.int64)
    id_rank[order] = np.arange(len(order))
    id_rank.setflags(write=False)
    return RetrievalIndex(ids=tuple(gallery.ids), matrix=mat, id_rank=id_rank)


def _rank_scores(
    index: RetrievalIndex, scores: np.ndarray, k: int, exclude_pos: int | None
) -> tuple[tuple[str, float], ...]:
    if exclude_pos is None:
        cand = np.arange(len(index.ids))
    else:
        cand = np.delete(np.arange(len(index.ids)), exclude_pos)
    s = scores[cand]
    # lexsort: primary key is the last one; ties fall back to ascending id
    order = np.lexsort((index.id_rank[cand], -s))
    top = cand[order[: min(k, cand.size)]]
    return tuple((index.ids[i], float(scores[i])) for i in top)


def query_topk(
    index: RetrievalIndex,
    q: np.ndarray,
    k: int,
    exclude_id: str | None = None,
    query_id: str = "",
) -> RankedList:
    """Top-k gallery rows by cosine score for a single query vector."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise ValueError(f"query has shape {q.shape}, index dim is {index.dim}")
    qn = np.linalg.norm(q)
    if qn < _ZERO_EPS:
        raise ValueError("query vector has zero norm")
    scores = index.matrix @ (q / qn)
    exclude_pos = None
    if exclude_id is not None and exclude_id in index.ids:
        exclude_pos = index.ids.index(exclude_id)
    return RankedList(query_id=query_id, hits=_rank_scores(index, scores, k, exclude_pos))


def batch_retrieve(
    index: RetrievalIndex,
    queries: EmbeddingSet,
    k: int,
    allow_self_match: bool = False,
) -> list[RankedList]:
    """Rank every query against the gallery; equals per-query query_topk.

    Queries whose id also appears in the gallery are excluded from their
    own candidate list unless ``allow_self_match``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if queries.dim != index.dim:
        raise ValueError(f"query dim {queries.dim} != gallery dim {index.dim}")
    qmat = np.asarray(queries.data, dtype=np.float64)
    norms = np.linalg.norm(qmat, axis=1)
    bad = np.flatnonzero(norms < _ZERO_EPS)
    if bad.size:
        raise ValueError(
            f"query rows with zero norm: {[queries.ids[i] for i in bad[:5]]}"
        )
    qmat = qmat / norms[:, None]

    gallery_pos = {gid: i for i, gid in enumerate(index.ids)}
    out: list[RankedList] = []
    for start in range(0, len(queries.ids), _QUERY_BLOCK):
        block = slice(start, start + _QUERY_BLOCK)
        scores = qmat[block] @ index.matrix.T
        for row, qid in enumerate(queries.ids[block]):
            exclude = None if allow_self_match else gallery_pos.get(qid)
            out.append(
                RankedList(query_id=qid, hits=_rank_scores(index, scores[row], k, exclude))
            )
    return out


def dump_rankings(ranked: list[RankedList], path: str | Path) -> None:
    """TSV dump: query_id, rank (1-based), gallery_id, score (6 decimals)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rl in ranked:
            for rank, (gid, score) in enumerate(rl.hits, start=1):
                fh.write(f"{rl.query_id}\t{rank}\t{gid}\t{score:.6f}\n")

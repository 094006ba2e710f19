"""Fusion and confidence-weighted orthogonal projection.

Style and content cues are fused by vector addition followed by L2
normalization; the content component is then removed from the fused
style vector by projecting along the content direction, scaled by a
confidence weight ``alpha = max(0, 1 - cos(s_r, c_r))``. High
style-content similarity yields a small alpha, preserving intrinsic
correlations instead of erasing them.

All operations are pure and run in float64 internally; batch variants
are the row-wise composition of the scalar ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import AlignmentHead
from .store import FeatureRole, JoinedTable

ZERO_NORM_EPS = 1e-12
UNIT_TOL = 1e-4


class DecoupleError(ValueError):
    """Raised when a batch row cannot be decoupled; carries offending ids."""

    def __init__(self, message: str, ids: list[str] | None = None):
        self.ids = ids or []
        if self.ids:
            message = f"{message} (ids: {self.ids[:5]}{'...' if len(self.ids) > 5 else ''})"
        super().__init__(message)


@dataclass(frozen=True)
class StyleVectors:
    """Per-image decoupling output: fused vectors, confidence, pure style."""

    id: str
    s_r: np.ndarray
    c_r: np.ndarray
    alpha: float
    s_pure: np.ndarray

    def __post_init__(self) -> None:
        for name in ("s_r", "c_r", "s_pure"):
            v = getattr(self, name)
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise ValueError(f"{name} is not unit-norm for id {self.id!r}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        raw = max(0.0, 1.0 - float(np.dot(self.s_r, self.c_r)))
        if abs(self.alpha - raw) > 1e-6 and abs(self.alpha - min(1.0, raw)) > 1e-6:
            raise ValueError(
                f"alpha {self.alpha} inconsistent with s_r/c_r similarity for id {self.id!r}"
            )


def normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||_2; rejects (near-)zero vectors."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < ZERO_NORM_EPS:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def normalize_rows(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize a matrix; returns (unit rows, indices of zero rows)."""
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    bad = np.flatnonzero(norms < ZERO_NORM_EPS)
    safe = np.where(norms < ZERO_NORM_EPS, 1.0, norms)
    return mat / safe[:, None], bad


def fuse(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Combine two cues of one aspect: normalize(x + y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"cannot fuse vectors of shapes {x.shape} and {y.shape}")
    s = x + y
    if np.linalg.norm(s) < ZERO_NORM_EPS:
        raise ValueError("fusion inputs cancel to the zero vector")
    return normalize(s)


def _check_unit(v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must be unit-norm (|norm - 1| <= {UNIT_TOL})")
    return v


def confidence_alpha(s_r: np.ndarray, c_r: np.ndarray) -> float:
    """Confidence weight max(0, 1 - cos(s_r, c_r)); in [0, 2] for unit inputs."""
    s_r = _check_unit(s_r, "s_r")
    c_r = _check_unit(c_r, "c_r")
    return max(0.0, 1.0 - float(np.dot(s_r, c_r)))


def project_style(
    s_r: np.ndarray, c_r: np.ndarray, clamp_alpha: bool = False
) -> tuple[np.ndarray, float]:
    """Remove the content component from s_r, weighted by confidence.

    Computes ``normalize(s_r - alpha * dot(s_r, c_r) * c_r)``. Before
    normalization the residual satisfies
    ``dot(residual, c_r) == (1 - alpha) * dot(s_r, c_r)`` exactly.

    With ``clamp_alpha`` the weight is clipped to [0, 1], avoiding the
    overshoot (flipped content component) the raw formula produces when
    the two vectors point away from each other.
    """
    s_r = _check_unit(s_r, "s_r")
    c_r = _check_unit(c_r, "c_r")
    alpha = confidence_alpha(s_r, c_r)
    if clamp_alpha:
        alpha = min(alpha, 1.0)
    residual = s_r - alpha * float(np.dot(s_r, c_r)) * c_r
    if np.linalg.norm(residual) < ZERO_NORM_EPS:
        raise ValueError("projection residual is zero; inputs are degenerate")
    return normalize(residual), alpha


def project_rows(
    s_r: np.ndarray, c_r: np.ndarray, clamp_alpha: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise project_style over matrices of unit vectors.

    Returns (s_pure rows, alpha per row). Rows with a zero residual raise.
    """
    s_r = np.asarray(s_r, dtype=np.float64)
    c_r = np.asarray(c_r, dtype=np.float64)
    if s_r.shape != c_r.shape:
        raise ValueError(f"shape mismatch: {s_r.shape} vs {c_r.shape}")
    sim = np.einsum("ij,ij->i", s_r, c_r)
    alpha = np.maximum(0.0, 1.0 - sim)
    if clamp_alpha:
        alpha = np.minimum(alpha, 1.0)
    residual = s_r - (alpha * sim)[:, None] * c_r
    s_pure, bad = normalize_rows(residual)
    if bad.size:
        err = ValueError(f"projection residual is zero for rows {bad[:5].tolist()}")
        err.rows = bad.tolist()  # type: ignore[attr-defined]
        raise err
    return s_pure, alpha


def decouple_batch(
    table: JoinedTable,
    head: AlignmentHead | None,
    *,
    clamp_alpha: bool = False,
    use_text: bool = True,
) -> list[StyleVectors]:
    """Decouple every joined row into StyleVectors.

    Role ``b`` and role ``c`` are required; the unimodal ``c`` vectors are
    mapped through ``head`` (or used as-is when ``head`` is None, which
    requires matching dimensions). Text roles ``a``/``d`` refine the fused
    vectors when present and ``use_text`` is set; otherwise
    ``s_r = normalize(b)`` and ``c_r = normalize(head(c))``.
    """
    ids = [r.id for r in table.records]
    vecs = table.vectors
    if FeatureRole.IMAGE_MULTIMODAL not in vecs:
        raise DecoupleError("role 'b' (image_multimodal) is required")
    if FeatureRole.CONTENT_UNIMODAL not in vecs:
        raise DecoupleError("role 'c' (content_unimodal) is required")

    b = np.asarray(vecs[FeatureRole.IMAGE_MULTIMODAL], dtype=np.float64)
    c_in = np.asarray(vecs[FeatureRole.CONTENT_UNIMODAL], dtype=np.float64)
    if head is not None:
        c_mapped = head.forward_batch(c_in)
    else:
        if c_in.shape[1] != b.shape[1]:
            raise DecoupleError(
                f"role 'c' dim {c_in.shape[1]} != role 'b' dim {b.shape[1]} "
                "and no alignment head was given"
            )
        c_mapped = c_in
    if c_mapped.shape[1] != b.shape[1]:
        raise DecoupleError(
            f"alignment head output dim {c_mapped.shape[1]} != role 'b' dim {b.shape[1]}"
        )

    a = vecs.get(FeatureRole.STYLE_TEXT) if use_text else None
    d = vecs.get(FeatureRole.CONTENT_TEXT) if use_text else None

    s_sum = b if a is None else np.asarray(a, dtype=np.float64) + b
    c_sum = c_mapped if d is None else np.asarray(d, dtype=np.float64) + c_mapped

    s_r, bad = normalize_rows(s_sum)
    if bad.size:
        raise DecoupleError("fused style vector is zero", [ids[i] for i in bad])
    c_r, bad = normalize_rows(c_sum)
    if bad.size:
        raise DecoupleError("fused content vector is zero", [ids[i] for i in bad])

    try:
        s_pure, alpha = project_rows(s_r, c_r, clamp_alpha=clamp_alpha)
    except ValueError as e:
        rows = getattr(e, "rows", [])
        raise DecoupleError("projection residual is zero", [ids[i] for i in rows])

    return [
        StyleVectors(
            id=ids[i], s_r=s_r[i], c_r=c_r[i], alpha=float(alpha[i]), s_pure=s_pure[i]
        )
        for i in range(len(ids))
    ]

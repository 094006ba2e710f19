"""Fusion and confidence-weighted projection math."""

import numpy as np
import pytest

from sdec.decoupler import (
    DecoupleError,
    confidence_alpha,
    decouple_batch,
    fuse,
    normalize,
    project_rows,
    project_style,
)
from sdec.alignment import AlignmentHead
from sdec.store import FeatureRole, JoinedTable, ManifestRecord

from helpers import random_orthogonal, random_unit


class TestNormalize:
    def test_three_four_five(self):
        assert np.allclose(normalize([3.0, 4.0]), [0.6, 0.8])

    def test_all_ones(self):
        assert np.allclose(normalize([1.0, 1.0, 1.0, 1.0]), [0.5, 0.5, 0.5, 0.5])

    def test_zero_vector_errors(self):
        with pytest.raises(ValueError, match="zero"):
            normalize([0.0, 0.0])

    def test_output_unit_norm(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = rng.standard_normal(rng.integers(2, 40)) * rng.uniform(0.01, 100)
            assert abs(np.linalg.norm(normalize(v)) - 1.0) < 1e-6


class TestFuse:
    def test_orthogonal_inputs(self):
        out = fuse([1.0, 0.0], [0.0, 1.0])
        assert np.allclose(out, [0.70710678, 0.70710678])

    def test_same_direction_is_identity(self):
        u = normalize([2.0, 1.0, -1.0])
        assert np.allclose(fuse(u, u), u)

    def test_cancellation_errors(self):
        with pytest.raises(ValueError, match="zero"):
            fuse([1.0, 0.0], [-1.0, 0.0])

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            fuse([1.0, 0.0], [1.0, 0.0, 0.0])


class TestConfidenceAlpha:
    def test_identical_vectors(self):
        u = normalize([1.0, 2.0, 3.0])
        assert confidence_alpha(u, u) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal(self):
        assert confidence_alpha([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)

    def test_antipodal(self):
        assert confidence_alpha([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(2.0)

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            confidence_alpha([2.0, 0.0], [0.0, 1.0])


class TestProjectStyle:
    def test_orthogonal_pair_passes_through(self):
        s_pure, alpha = project_style([1.0, 0.0], [0.0, 1.0])
        assert alpha == pytest.approx(1.0)
        assert np.allclose(s_pure, [1.0, 0.0])

    def test_identical_pair_fully_preserved(self):
        u = normalize([1.0, 1.0, 0.0])
        s_pure, alpha = project_style(u, u)
        assert alpha == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(s_pure, u)

    def test_hand_example(self):
        s_pure, alpha = project_style([0.6, 0.8], [1.0, 0.0])
        assert alpha == pytest.approx(0.4)
        assert np.allclose(s_pure, [0.410365, 0.911923], atol=1e-5)

    def test_residual_identity_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            dim = int(rng.integers(2, 64))
            s = random_unit(rng, dim)
            c = random_unit(rng, dim)
            alpha = confidence_alpha(s, c)
            residual = s - alpha * np.dot(s, c) * c
            assert abs(np.dot(residual, c) - (1 - alpha) * np.dot(s, c)) < 1e-6

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            dim = int(rng.integers(2, 32))
            s = random_unit(rng, dim)
            c = random_unit(rng, dim)
            q = random_orthogonal(rng, dim)
            direct, _ = project_style(q @ s, q @ c)
            rotated = q @ project_style(s, c)[0]
            assert np.allclose(direct, rotated, atol=1e-5)

    def test_monotone_removal_when_alpha_in_unit_interval(self):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 100:
            s = random_unit(rng, 8)
            c = random_unit(rng, 8)
            alpha = confidence_alpha(s, c)
            if not 0.0 <= alpha <= 1.0:
                continue
            residual = s - alpha * np.dot(s, c) * c
            assert abs(np.dot(residual, c)) <= abs(np.dot(s, c)) + 1e-12
            checked += 1

    def test_full_projection_is_fixed_point(self):
        # the alpha=1 residual is content-orthogonal; projecting it again is a no-op
        rng = np.random.default_rng(5)
        for _ in range(50):
            s = random_unit(rng, 12)
            c = random_unit(rng, 12)
            r = normalize(s - np.dot(s, c) * c)
            again, alpha = project_style(r, c)
            assert alpha == pytest.approx(1.0, abs=1e-9)
            assert np.allclose(again, r, atol=1e-6)

    def test_clamped_antipodal_pair_has_zero_residual(self):
        u = normalize([0.3, -0.4, 0.5])
        with pytest.raises(ValueError, match="residual"):
            project_style(-u, u, clamp_alpha=True)

    def test_unclamped_antipodal_pair_flips(self):
        u = normalize([0.3, -0.4, 0.5])
        s_pure, alpha = project_style(-u, u, clamp_alpha=False)
        assert alpha == pytest.approx(2.0)
        assert np.allclose(s_pure, u, atol=1e-9)

    def test_clamp_limits_alpha(self):
        rng = np.random.default_rng(6)
        s = random_unit(rng, 6)
        c = normalize(-s + 0.3 * random_unit(rng, 6))
        _, alpha_raw = project_style(s, c)
        _, alpha_clamped = project_style(s, c, clamp_alpha=True)
        assert alpha_raw > 1.0
        assert alpha_clamped == pytest.approx(1.0)


def _table(ids, vectors):
    records = [ManifestRecord(id=i, artist="a", style="s", split="gallery") for i in ids]
    return JoinedTable(records=records, vectors=vectors)


class TestDecoupleBatch:
    def test_all_roles_matches_definitions(self):
        rng = np.random.default_rng(7)
        n, dim = 4, 6
        mats = {
            role: np.stack([random_unit(rng, dim) for _ in range(n)])
            for role in FeatureRole
        }
        head = AlignmentHead(W=np.eye(dim), bias=np.zeros(dim))
        rows = decouple_batch(_table([f"i{k}" for k in range(n)], mats), head)
        for i, sv in enumerate(rows):
            s_r = fuse(mats[FeatureRole.STYLE_TEXT][i], mats[FeatureRole.IMAGE_MULTIMODAL][i])
            c_r = fuse(mats[FeatureRole.CONTENT_TEXT][i], mats[FeatureRole.CONTENT_UNIMODAL][i])
            s_pure, alpha = project_style(s_r, c_r)
            assert np.allclose(sv.s_r, s_r, atol=1e-12)
            assert np.allclose(sv.c_r, c_r, atol=1e-12)
            assert sv.alpha == pytest.approx(alpha, abs=1e-12)
            assert np.allclose(sv.s_pure, s_pure, atol=1e-12)

    def test_text_roles_absent_falls_back(self):
        rng = np.random.default_rng(8)
        n, dim = 3, 5
        b = rng.standard_normal((n, dim))
        c = rng.standard_normal((n, dim))
        head = AlignmentHead(W=np.eye(dim), bias=np.zeros(dim))
        rows = decouple_batch(
            _table(
                [f"i{k}" for k in range(n)],
                {FeatureRole.IMAGE_MULTIMODAL: b, FeatureRole.CONTENT_UNIMODAL: c},
            ),
            head,
        )
        for i, sv in enumerate(rows):
            assert np.allclose(sv.s_r, normalize(b[i]))
            assert np.allclose(sv.c_r, normalize(c[i]))

    def test_composition_oracle_random_rows(self):
        # batch output must equal composing the scalar ops row by row
        rng = np.random.default_rng(9)
        n, dim_c, dim = 3, 4, 4
        mats = {
            FeatureRole.STYLE_TEXT: np.stack([random_unit(rng, dim) for _ in range(n)]),
            FeatureRole.IMAGE_MULTIMODAL: np.stack([random_unit(rng, dim) for _ in range(n)]),
            FeatureRole.CONTENT_UNIMODAL: np.stack([random_unit(rng, dim_c) for _ in range(n)]),
            FeatureRole.CONTENT_TEXT: np.stack([random_unit(rng, dim) for _ in range(n)]),
        }
        head = AlignmentHead(W=rng.standard_normal((dim, dim_c)), bias=rng.standard_normal(dim))
        rows = decouple_batch(_table([f"i{k}" for k in range(n)], mats), head)
        for i, sv in enumerate(rows):
            mapped = head.forward(mats[FeatureRole.CONTENT_UNIMODAL][i])
            s_r = fuse(mats[FeatureRole.STYLE_TEXT][i], mats[FeatureRole.IMAGE_MULTIMODAL][i])
            c_r = fuse(mats[FeatureRole.CONTENT_TEXT][i], mapped)
            s_pure, alpha = project_style(s_r, c_r)
            assert np.allclose(sv.s_pure, s_pure, atol=1e-10)
            assert sv.alpha == pytest.approx(alpha, abs=1e-10)

    def test_outputs_unit_norm(self):
        rng = np.random.default_rng(10)
        n, dim = 50, 16
        mats = {
            FeatureRole.IMAGE_MULTIMODAL: rng.standard_normal((n, dim)),
            FeatureRole.CONTENT_UNIMODAL: rng.standard_normal((n, dim)),
        }
        rows = decouple_batch(_table([f"i{k}" for k in range(n)], mats), None)
        for sv in rows:
            for v in (sv.s_r, sv.c_r, sv.s_pure):
                assert abs(np.linalg.norm(v) - 1.0) < 1e-6

    def test_missing_required_role(self):
        with pytest.raises(DecoupleError, match="'b'"):
            decouple_batch(
                _table(["x"], {FeatureRole.CONTENT_UNIMODAL: np.ones((1, 2))}), None
            )

    def test_error_tagged_with_id(self):
        mats = {
            FeatureRole.IMAGE_MULTIMODAL: np.array([[1.0, 0.0], [0.0, 0.0]]),
            FeatureRole.CONTENT_UNIMODAL: np.array([[1.0, 0.0], [0.0, 1.0]]),
        }
        with pytest.raises(DecoupleError, match="bad_row"):
            decouple_batch(_table(["good_row", "bad_row"], mats), None)

    def test_head_dim_mismatch_named(self):
        mats = {
            FeatureRole.IMAGE_MULTIMODAL: np.ones((1, 3)),
            FeatureRole.CONTENT_UNIMODAL: np.ones((1, 2)),
        }
        head = AlignmentHead(W=np.eye(2), bias=np.zeros(2))  # outputs dim 2, b is dim 3
        with pytest.raises(DecoupleError, match="2.*3|3.*2"):
            decouple_batch(_table(["x"], mats), head)


class TestProjectRows:
    def test_matches_scalar_projection(self):
        rng = np.random.default_rng(11)
        s = np.stack([random_unit(rng, 8) for _ in range(20)])
        c = np.stack([random_unit(rng, 8) for _ in range(20)])
        batch_pure, batch_alpha = project_rows(s, c)
        for i in range(20):
            one_pure, one_alpha = project_style(s[i], c[i])
            assert np.allclose(batch_pure[i], one_pure, atol=1e-12)
            assert batch_alpha[i] == pytest.approx(one_alpha, abs=1e-12)

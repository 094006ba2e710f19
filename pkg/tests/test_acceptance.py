"""Acceptance gate: every release criterion, at its stated tolerance.

Each test prints one ``ACCEPTANCE[...]: PASS``/``FAIL`` line (visible with
``pytest -rA`` or ``-s``) and enforces the criterion's runtime budget.
"""

import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

from sdec import pipeline as pl
from sdec.alignment import TrainConfig, alignment_loss, loss_gradient, train_alignment
from sdec.alignment import AlignmentHead
from sdec.decoupler import confidence_alpha, project_style
from sdec.evaluation import (
    adjusted_rand_index,
    average_precision_at_k,
    clustering_accuracy,
    recall_at_k,
    spearman_rho,
)
from sdec.retrieval import RankedList, batch_retrieve, build_index
from sdec.store import EmbeddingFormatError, EmbeddingSet, load_embedding_set, write_embedding_set

from helpers import (
    make_factor_dataset,
    make_orthogonal_task,
    make_toy_dataset,
    random_orthogonal,
    random_unit,
)
from oracles import (
    oracle_acc_exhaustive,
    oracle_ap_at_k,
    oracle_ari_pairs,
    oracle_recall_at_k,
    oracle_spearman,
)
from test_alignment import finite_difference_grads


@contextmanager
def criterion(name: str, budget_s: float | None = None):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE[{name}]: FAIL ({time.perf_counter() - start:.1f}s)")
        raise
    elapsed = time.perf_counter() - start
    if budget_s is not None and elapsed > budget_s:
        print(f"ACCEPTANCE[{name}]: FAIL (runtime {elapsed:.1f}s > {budget_s:.0f}s budget)")
        pytest.fail(f"{name}: runtime {elapsed:.1f}s exceeds {budget_s:.0f}s")
    print(f"ACCEPTANCE[{name}]: PASS ({elapsed:.1f}s)")


def _cheap_orthogonal_apply(rng: np.random.Generator, dim: int):
    """Random orthogonal operator as sign-flip + permutation + Householder."""
    signs = rng.choice([-1.0, 1.0], size=dim)
    perm = rng.permutation(dim)
    u = random_unit(rng, dim)

    def apply(v: np.ndarray) -> np.ndarray:
        h = v - 2.0 * np.dot(u, v) * u
        return (signs * h)[perm]

    return apply


def test_projection_correctness():
    with criterion("projection-correctness", budget_s=5.0):
        rng = np.random.default_rng(101)
        dims = np.unique(
            np.round(np.exp(rng.uniform(np.log(4), np.log(1024), size=1000))).astype(int)
        )
        draws = rng.choice(dims, size=1000)
        for i, dim in enumerate(draws):
            dim = int(dim)
            s = random_unit(rng, dim)
            c = random_unit(rng, dim)
            alpha = confidence_alpha(s, c)
            residual = s - alpha * np.dot(s, c) * c
            assert abs(np.dot(residual, c) - (1 - alpha) * np.dot(s, c)) < 1e-6

            if dim <= 64:
                q = random_orthogonal(rng, dim)
                rotated = q @ project_style(s, c)[0]
                direct = project_style(q @ s, q @ c)[0]
            else:
                apply_q = _cheap_orthogonal_apply(rng, dim)
                rotated = apply_q(project_style(s, c)[0])
                direct = project_style(apply_q(s), apply_q(c))[0]
            assert np.allclose(direct, rotated, atol=1e-5)


def test_metric_oracle_equivalence():
    with criterion("metric-oracle-equivalence"):
        rng = np.random.default_rng(202)
        for _ in range(200):
            n = int(rng.integers(2, 51))
            ids = [f"g{i:02d}" for i in range(n)]
            rng.shuffle(ids)
            hits = RankedList("q", tuple((g, 1.0 - i * 1e-3) for i, g in enumerate(ids)))
            relevant = set(rng.choice(ids, size=int(rng.integers(1, n + 1)), replace=False))
            k = int(rng.integers(1, n + 5))
            assert abs(
                average_precision_at_k(hits, relevant, k) - oracle_ap_at_k(ids, relevant, k)
            ) <= 1e-9
            assert recall_at_k(hits, relevant, k) == oracle_recall_at_k(ids, relevant, k)

            pred = rng.integers(0, int(rng.integers(1, 7)), size=n).tolist()
            truth = rng.integers(0, int(rng.integers(1, 7)), size=n).tolist()
            assert abs(
                clustering_accuracy(pred, truth) - oracle_acc_exhaustive(pred, truth)
            ) <= 1e-9
            assert abs(
                adjusted_rand_index(pred, truth) - oracle_ari_pairs(pred, truth)
            ) <= 1e-9

            x = rng.integers(0, 12, size=n).astype(float)
            y = rng.integers(0, 12, size=n).astype(float)
            if len(set(x)) >= 2 and len(set(y)) >= 2:
                assert abs(
                    spearman_rho(x, y) - oracle_spearman(x.tolist(), y.tolist())
                ) <= 1e-9


def test_hand_value_checks():
    with criterion("hand-values"):
        assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5, abs=1e-12)
        hits = RankedList("q", (("r1", 0.9), ("x", 0.8), ("r2", 0.7)))
        assert average_precision_at_k(hits, {"r1", "r2"}, 3) == pytest.approx(0.83333, abs=1e-5)
        s_pure, alpha = project_style([0.6, 0.8], [1.0, 0.0])
        assert alpha == pytest.approx(0.4, abs=1e-12)
        assert np.allclose(s_pure, [0.410365, 0.911923], atol=1e-5)


def test_alignment_gradient_and_synthetic_task():
    with criterion("alignment-gradient", budget_s=60.0):
        rng = np.random.default_rng(303)
        for trial in range(20):
            b = int(rng.integers(3, 6))
            d_in = int(rng.integers(2, 5))
            d_out = int(rng.integers(2, 5))
            head = AlignmentHead(
                W=rng.standard_normal((d_out, d_in)), bias=0.1 * rng.standard_normal(d_out)
            )
            x = rng.standard_normal((b, d_in))
            t_img = rng.standard_normal((b, d_out))
            t_txt = rng.standard_normal((b, d_out)) if trial % 2 else None
            gw, gb = loss_gradient(head, x, t_img, t_txt)
            fw, fb = finite_difference_grads(head, x, t_img, t_txt, h=1e-4)
            assert np.allclose(gw, fw, rtol=1e-4, atol=1e-8)
            assert np.allclose(gb, fb, rtol=1e-4, atol=1e-8)

        x, t = make_orthogonal_task(seed=7, n=500, dim=16)
        x_tr, t_tr, x_te, t_te = x[:400], t[:400], x[400:], t[400:]
        cfg = TrainConfig(learning_rate=1.0, epochs=150, batch_size=4096, seed=0)
        head, _ = train_alignment(x_tr, t_tr, t_tr, cfg)
        mapped = head.forward_batch(x_te)
        mapped /= np.linalg.norm(mapped, axis=1, keepdims=True)
        teachers = t_te / np.linalg.norm(t_te, axis=1, keepdims=True)
        top1 = (np.argmax(mapped @ teachers.T, axis=1) == np.arange(len(x_te))).mean()
        assert top1 >= 0.95

        design = np.hstack([x_tr, np.ones((len(x_tr), 1))])
        sol, *_ = np.linalg.lstsq(design, t_tr, rcond=None)
        ls_loss = alignment_loss(x_tr @ sol[:-1] + sol[-1], t_tr, t_tr, cfg.tau_s, cfg.tau_t)
        final = alignment_loss(head.forward_batch(x_tr), t_tr, t_tr, cfg.tau_s, cfg.tau_t)
        assert abs(final / ls_loss - 1.0) <= 0.05


def test_synthetic_factor_experiment(tmp_path):
    with criterion("synthetic-factor-experiment", budget_s=300.0):
        cfg_path = make_factor_dataset(tmp_path / "factor")
        cfg = pl.load_config(cfg_path)
        rows = {r.name: r.report.metrics for r in pl.run_ablation(cfg)}

        baseline = rows["img_only"]["mAP@1"]
        full = rows["img_txt_dino_trained"]["mAP@1"]
        raw = rows["img_txt_dino_raw"]["mAP@1"]
        print(
            f"  style-mAP@1: baseline={baseline:.4f} full={full:.4f} raw={raw:.4f} "
            f"img_txt={rows['img_txt']['mAP@1']:.4f}"
        )
        assert full - baseline >= 0.10, "full pipeline must beat raw-b baseline by >= 10 points"
        assert full > raw, "trained unimodal reference must beat the unaligned one"

        # the orchestrated pipeline is exactly the full ablation row
        report = pl.run_pipeline(cfg)
        assert report.metrics["mAP@1"] == pytest.approx(full, abs=1e-12)


def test_pipeline_determinism(tmp_path):
    with criterion("pipeline-determinism"):
        cfg_path = make_toy_dataset(tmp_path / "toy")
        cfg = pl.load_config(cfg_path)
        outputs = []
        for run in ("run1", "run2"):
            run_cfg = replace(cfg, output_dir=tmp_path / run)
            pl.run_pipeline(run_cfg)
            outputs.append(
                {
                    name: (tmp_path / run / fname).read_bytes()
                    for name, fname in pl.ARTIFACTS.items()
                }
            )
        for name in pl.ARTIFACTS:
            assert outputs[0][name] == outputs[1][name], f"{name} differs between runs"


def test_format_roundtrips_and_fuzzing(tmp_path):
    with criterion("format-roundtrips"):
        rng = np.random.default_rng(404)
        for trial in range(100):
            count = int(rng.integers(0, 20))
            dim = int(rng.integers(1, 100))
            emb = EmbeddingSet(
                model_id=f"model-{trial}",
                dim=dim,
                ids=tuple(f"id{trial}_{i}" for i in range(count)),
                data=rng.standard_normal((count, dim)).astype(np.float32),
            )
            path = tmp_path / "round.sdec"
            write_embedding_set(emb, path)
            back = load_embedding_set(path)
            assert back.ids == emb.ids
            assert back.model_id == emb.model_id
            assert back.data.tobytes() == emb.data.tobytes()

        base_emb = EmbeddingSet(
            model_id="fuzz",
            dim=6,
            ids=tuple(f"f{i}" for i in range(8)),
            data=rng.standard_normal((8, 6)).astype(np.float32),
        )
        base_path = tmp_path / "base.sdec"
        write_embedding_set(base_emb, base_path)
        base = base_path.read_bytes()
        path = tmp_path / "mut.sdec"
        survivors = 0
        for n in range(1000):
            buf = bytearray(base)
            kind = n % 4
            if kind == 0:
                for pos in rng.integers(0, len(buf), size=int(rng.integers(1, 5))):
                    buf[pos] ^= int(rng.integers(1, 256))
            elif kind == 1:
                buf = buf[: int(rng.integers(0, len(buf)))]
            elif kind == 2:
                buf += bytes(rng.integers(0, 256, size=int(rng.integers(1, 32)), dtype=np.uint8))
            else:  # splice a chunk of itself somewhere else
                i, j = sorted(rng.integers(0, len(buf), size=2))
                buf = buf[:i] + buf[j:]
            path.write_bytes(bytes(buf))
            try:
                loaded = load_embedding_set(path)
            except EmbeddingFormatError:
                continue
            survivors += 1
            assert loaded.dim >= 1
            assert len(set(loaded.ids)) == len(loaded.ids)
            assert all(loaded.ids)
            assert loaded.data.shape == (len(loaded.ids), loaded.dim)
            assert np.isfinite(loaded.data).all()
        print(f"  fuzz survivors (valid after mutation): {survivors}/1000")


def test_retrieval_exactness_at_scale(tmp_path):
    with criterion("retrieval-exactness", budget_s=30.0):
        rng = np.random.default_rng(505)
        n_gallery, n_query, dim = 10_000, 1_000, 256
        gallery = EmbeddingSet(
            "big", dim, tuple(f"g{i:05d}" for i in range(n_gallery)),
            rng.standard_normal((n_gallery, dim)).astype(np.float32),
        )
        queries = EmbeddingSet(
            "big", dim, tuple(f"q{i:04d}" for i in range(n_query)),
            rng.standard_normal((n_query, dim)).astype(np.float32),
        )
        index = build_index(gallery)
        k = 100
        ranked = batch_retrieve(index, queries, k=k)
        assert len(ranked) == n_query

        sampled = rng.choice(n_query, size=10, replace=False)
        gal64 = np.asarray(gallery.data, dtype=np.float64)
        gal_norms = np.sqrt((gal64 * gal64).sum(axis=1))
        for qi in sampled:
            q = np.asarray(queries.data[qi], dtype=np.float64)
            scores = [
                (gallery.ids[g], float(np.dot(gal64[g], q) / (gal_norms[g] * np.linalg.norm(q))))
                for g in range(n_gallery)
            ]
            scores.sort(key=lambda t: (-t[1], t[0]))
            want = scores[:k]
            got = ranked[qi].hits
            assert [g for g, _ in got] == [g for g, _ in want]
            for (_, sg), (_, sw) in zip(got, want):
                assert sg == pytest.approx(sw, abs=1e-9)

"""Shared fixture builders: toy datasets, synthetic tasks, config files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from sdec.store import EmbeddingSet, write_embedding_set


def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def make_orthogonal_task(
    seed: int = 7, n: int = 500, dim: int = 16
) -> tuple[np.ndarray, np.ndarray]:
    """Student inputs plus teachers produced by a fixed orthogonal map."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim))
    q = random_orthogonal(rng, dim)
    return x, x @ q.T


def write_sets(
    out_dir: Path, sets: dict[str, np.ndarray], ids: list[str], model: str = "toy"
) -> dict[str, Path]:
    paths = {}
    for letter, data in sets.items():
        p = out_dir / f"role_{letter}.sdec"
        emb = EmbeddingSet(
            model_id=f"{model}-{letter}",
            dim=data.shape[1],
            ids=tuple(ids),
            data=data.astype(np.float32),
        )
        write_embedding_set(emb, p)
        paths[letter] = p
    return paths


def make_toy_dataset(out_dir: Path, seed: int = 3, n: int = 20, dim: int = 8) -> Path:
    """Tiny labeled dataset with mild class structure and a few ratings.

    Returns the path of a ready-to-run config file.
    """
    rng = np.random.default_rng(seed)
    artists = [f"artist_{i}" for i in range(4)]
    styles = ["ink", "oil"]
    ids = [f"img_{i:03d}" for i in range(n)]

    style_proto = {s: random_unit(rng, dim) for s in styles}
    artist_proto = {a: random_unit(rng, dim) for a in artists}

    rows = []
    b = np.zeros((n, dim))
    c = np.zeros((n, dim))
    a_vec = np.zeros((n, dim))
    d_vec = np.zeros((n, dim))
    for i, id_ in enumerate(ids):
        artist = artists[i % len(artists)]
        style = styles[i % len(styles)]
        split = "train" if i < n // 2 else ("gallery" if i < n - n // 4 else "query")
        score = round(1 + 4 * rng.random(), 2) if split != "train" and i % 2 else None
        rows.append(
            {"id": id_, "artist": artist, "style": style, "split": split}
            | ({"human_score": score} if score is not None else {})
        )
        noise = 0.2 * rng.standard_normal(dim)
        b[i] = style_proto[style] + artist_proto[artist] + noise
        c[i] = artist_proto[artist] + 0.2 * rng.standard_normal(dim)
        a_vec[i] = style_proto[style] + 0.2 * rng.standard_normal(dim)
        d_vec[i] = artist_proto[artist] + 0.2 * rng.standard_normal(dim)

    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    paths = write_sets(out_dir, {"a": a_vec, "b": b, "c": c, "d": d_vec}, ids)

    config = {
        "config_version": 1,
        "manifest": str(manifest),
        "embeddings": {k: str(v) for k, v in paths.items()},
        "alignment": {"learning_rate": 0.05, "epochs": 40, "batch_size": 64},
        "decouple": {"clamp_alpha": False, "use_text": True},
        "relevance": {"label_field": "artist"},
        "ks": [1, 3, 5],
        "seed": 11,
        "output_dir": str(out_dir / "out"),
    }
    config_path = out_dir / "config.json"
    config_path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return config_path


def make_factor_dataset(
    out_dir: Path,
    seed: int = 20,
    n: int = 2000,
    n_styles: int = 20,
    n_contents: int = 50,
    d_style: int = 16,
    d_content: int = 32,
    sigma: float = 0.1,
    sigma_text: float = 0.15,
    content_leak: float = 1.0,
    content_weight: float = 1.5,
    epochs: int = 400,
) -> Path:
    """Independent style/content factor dataset for the pipeline experiment.

    The multimodal embedding carries both factors (content weighted up, as
    in real image-text encoders); the unimodal embedding carries only the
    content factor and lives in its own randomly rotated coordinate
    system, which the alignment head has to undo. Text roles are noisy
    class prototypes; the style text also leaks the content prototype
    (captions rarely describe style without naming the subject), so the
    quality of the content reference decides how clean the projection is.
    """
    rng = np.random.default_rng(seed)
    dim = d_style + d_content
    style_protos = np.stack([random_unit(rng, d_style) for _ in range(n_styles)])
    content_protos = np.stack([random_unit(rng, d_content) for _ in range(n_contents)])
    rotation = random_orthogonal(rng, dim)

    sid = rng.integers(0, n_styles, size=n)
    cid = rng.integers(0, n_contents, size=n)

    def pad_style(v):
        return np.concatenate([v, np.zeros(d_content)])

    def pad_content(v):
        return np.concatenate([np.zeros(d_style), v])

    b = np.zeros((n, dim))
    c = np.zeros((n, dim))
    a = np.zeros((n, dim))
    d = np.zeros((n, dim))
    for i in range(n):
        base = np.concatenate([style_protos[sid[i]], content_weight * content_protos[cid[i]]])
        base = base / np.linalg.norm(base)
        b[i] = base + sigma * rng.standard_normal(dim)
        c_clean = pad_content(content_protos[cid[i]])
        c[i] = rotation @ (c_clean + sigma * rng.standard_normal(dim))
        a[i] = (
            pad_style(style_protos[sid[i]])
            + content_leak * c_clean
            + sigma_text * rng.standard_normal(dim)
        )
        d[i] = c_clean + sigma_text * rng.standard_normal(dim)

    splits = np.array(["train"] * n, dtype=object)
    order = rng.permutation(n)
    n_train = int(0.4 * n)
    n_gallery = int(0.4 * n)
    splits[order[n_train : n_train + n_gallery]] = "gallery"
    splits[order[n_train + n_gallery :]] = "query"

    ids = [f"item_{i:05d}" for i in range(n)]
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for i in range(n):
            fh.write(
                json.dumps(
                    {
                        "id": ids[i],
                        "artist": f"content_{cid[i]:02d}",
                        "style": f"style_{sid[i]:02d}",
                        "split": str(splits[i]),
                    }
                )
                + "\n"
            )
    paths = write_sets(out_dir, {"a": a, "b": b, "c": c, "d": d}, ids, model="factor")

    config = {
        "config_version": 1,
        "manifest": str(manifest),
        "embeddings": {k: str(v) for k, v in paths.items()},
        "alignment": {
            "learning_rate": 0.7,
            "epochs": epochs,
            "batch_size": 4096,
            "tau_s": 0.1,
            "tau_t": 0.05,
            "warmup_fraction": 0.05,
        },
        "decouple": {"clamp_alpha": False, "use_text": True},
        "relevance": {"label_field": "style"},
        "ks": [1, 10],
        "seed": 5,
        "output_dir": str(out_dir / "out"),
    }
    config_path = out_dir / "config.json"
    config_path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return config_path

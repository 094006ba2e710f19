"""Pipeline orchestration: ingest, align, decouple, retrieve, evaluate.

Each stage writes one artifact into the run's output directory and is
skipped on rerun while the artifact is still valid (``force`` re-runs
everything). All stages derive their randomness from the single config
seed, so a finished run is byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import alignment as al
from . import decoupler as dc
from . import evaluation as ev
from . import retrieval as rt
from . import store

log = logging.getLogger("sdec")

CONFIG_VERSION = 1

ARTIFACTS = {
    "head": "head.sdah",
    "loss_curve": "align_loss.csv",
    "s_pure": "s_pure.sdec",
    "alpha": "alpha.jsonl",
    "rankings": "rankings.tsv",
    "report_json": "report.json",
    "report_tsv": "report.tsv",
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: str):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class RunConfig:
    manifest_path: Path
    embedding_paths: dict[store.FeatureRole, Path]
    train: al.TrainConfig
    relevance: ev.RelevanceSpec = ev.RelevanceSpec()
    ks: tuple[int, ...] = (1, 10, 100)
    seed: int = 0
    output_dir: Path = Path("out")
    clamp_alpha: bool = False
    use_text: bool = True
    allow_self_match: bool = False
    breakdowns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if list(self.ks) != sorted(set(self.ks)) or (self.ks and self.ks[0] < 1):
            raise ConfigError("ks must be ascending positive integers")

    def describe(self) -> dict:
        """Canonical config payload; excludes output_dir so identical runs
        into different directories hash the same."""
        return {
            "config_version": CONFIG_VERSION,
            "manifest": str(self.manifest_path),
            "embeddings": {r.value: str(p) for r, p in sorted(self.embedding_paths.items(), key=lambda kv: kv[0].value)},
            "alignment": {
                "learning_rate": self.train.learning_rate,
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "seed": self.train.seed,
                "tau_s": self.train.tau_s,
                "tau_t": self.train.tau_t,
                "warmup_fraction": self.train.warmup_fraction,
            },
            "decouple": {"clamp_alpha": self.clamp_alpha, "use_text": self.use_text},
            "relevance": {
                "label_field": self.relevance.label_field,
                "label_filter": self.relevance.label_filter,
            },
            "ks": list(self.ks),
            "seed": self.seed,
            "allow_self_match": self.allow_self_match,
            "breakdowns": list(self.breakdowns),
        }

    def config_hash(self) -> str:
        payload = json.dumps(self.describe(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Parse the JSON run config; CLI flag overrides win over file values."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    if raw.get("config_version") != CONFIG_VERSION:
        raise ConfigError(
            f"config_version must be {CONFIG_VERSION}, got {raw.get('config_version')!r}"
        )
    overrides = overrides or {}
    base = path.parent

    def respath(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    try:
        roles = {}
        for letter, p in raw.get("embeddings", {}).items():
            roles[store.FeatureRole(letter)] = respath(p)
        seed = int(overrides.get("seed", raw.get("seed", 0)))
        acfg = dict(raw.get("alignment", {}))
        train = al.TrainConfig(
            learning_rate=float(acfg.get("learning_rate", 1e-3)),
            epochs=int(acfg.get("epochs", 200)),
            batch_size=int(acfg.get("batch_size", 4096)),
            seed=int(acfg.get("seed", seed)),
            tau_s=float(acfg.get("tau_s", 0.1)),
            tau_t=float(acfg.get("tau_t", 0.05)),
            warmup_fraction=float(acfg.get("warmup_fraction", 0.1)),
        )
        dcfg = dict(raw.get("decouple", {}))
        rcfg = dict(raw.get("relevance", {}))
        cfg = RunConfig(
            manifest_path=respath(raw["manifest"]),
            embedding_paths=roles,
            train=train,
            relevance=ev.RelevanceSpec(
                label_field=overrides.get(
                    "label_field", rcfg.get("label_field", "artist")
                ),
                label_filter=rcfg.get("label_filter"),
            ),
            ks=tuple(int(k) for k in raw.get("ks", [1, 10, 100])),
            seed=seed,
            output_dir=Path(overrides["output_dir"])
            if "output_dir" in overrides
            else respath(raw.get("output_dir", "out")),
            clamp_alpha=bool(overrides.get("clamp_alpha", dcfg.get("clamp_alpha", False))),
            use_text=bool(dcfg.get("use_text", True)),
            allow_self_match=bool(
                overrides.get("allow_self_match", raw.get("allow_self_match", False))
            ),
            breakdowns=tuple(raw.get("breakdowns", [])),
        )
    except KeyError as e:
        raise ConfigError(f"config is missing required key {e}")
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))
    return cfg


# ---------------------------------------------------------------------------
# validation


def validate_config(cfg: RunConfig) -> list[str]:
    """Structural diagnostics: file headers, dimensions, manifest joins.

    Returns a list of human-readable issues; empty means clean.
    """
    issues: list[str] = []
    if not cfg.manifest_path.exists():
        issues.append(f"manifest file missing: {cfg.manifest_path}")
        return issues
    try:
        manifest = store.load_manifest(cfg.manifest_path)
    except store.ManifestError as e:
        return issues + [f"manifest invalid: {e}"]

    sets: dict[store.FeatureRole, store.EmbeddingSet] = {}
    for role in (
        store.FeatureRole.IMAGE_MULTIMODAL,
        store.FeatureRole.CONTENT_UNIMODAL,
    ):
        if role not in cfg.embedding_paths:
            issues.append(f"required role {role.value!r} has no embedding file bound")
    for role, p in sorted(cfg.embedding_paths.items(), key=lambda kv: kv[0].value):
        if not p.exists():
            issues.append(f"role {role.value!r} file missing: {p}")
            continue
        try:
            sets[role] = store.load_embedding_set(p)
        except store.EmbeddingFormatError as e:
            issues.append(f"role {role.value!r} file invalid: {e}")

    b = sets.get(store.FeatureRole.IMAGE_MULTIMODAL)
    for role in (store.FeatureRole.STYLE_TEXT, store.FeatureRole.CONTENT_TEXT):
        s = sets.get(role)
        if b is not None and s is not None and s.dim != b.dim:
            issues.append(
                f"role {role.value!r} dim {s.dim} != role 'b' dim {b.dim} "
                "(fusion requires equal dimensions)"
            )
    if cfg.use_text and not (
        store.FeatureRole.STYLE_TEXT in sets or store.FeatureRole.CONTENT_TEXT in sets
    ):
        issues.append("use_text is enabled but neither text role is bound")

    if sets:
        try:
            joined = store.align_sets(sets, manifest)
        except ValueError as e:
            issues.append(str(e))
        else:
            for role, missing in sorted(joined.missing.items(), key=lambda kv: kv[0].value):
                issues.append(
                    f"{len(missing)} manifest ids absent from role {role.value!r}: "
                    f"{missing[:3]}{'...' if len(missing) > 3 else ''}"
                )
            for split in store.VALID_SPLITS:
                if not any(r.split == split for r in joined.records):
                    issues.append(f"no joined rows in split {split!r}")
    return issues


# ---------------------------------------------------------------------------
# stages


def _load_inputs(cfg: RunConfig):
    manifest = store.load_manifest(cfg.manifest_path)
    sets = {role: store.load_embedding_set(p) for role, p in cfg.embedding_paths.items()}
    joined = store.align_sets(sets, manifest)
    return manifest, sets, joined


def stage_align(cfg: RunConfig, joined: store.JoinedTable, force: bool) -> al.AlignmentHead:
    """Train (or reuse) the unimodal-to-multimodal head on the train split."""
    out = cfg.output_dir / ARTIFACTS["head"]
    b_dim = joined.vectors[store.FeatureRole.IMAGE_MULTIMODAL].shape[1]
    c_dim = joined.vectors[store.FeatureRole.CONTENT_UNIMODAL].shape[1]
    if out.exists() and not force:
        try:
            head = al.load_head(out, expect_dim_in=c_dim, expect_dim_out=b_dim)
            log.info("alignment stage skipped (valid artifact %s exists)", out)
            return head
        except store.EmbeddingFormatError as e:
            log.warning("existing head artifact invalid (%s); retraining", e)
    train = joined.split("train")
    if len(train) < 2:
        raise StageError("align", f"need at least 2 train rows, found {len(train)}")
    t_txt = None
    if cfg.use_text and store.FeatureRole.CONTENT_TEXT in train.vectors:
        t_txt = train.vectors[store.FeatureRole.CONTENT_TEXT]
    head, curve = al.train_alignment(
        train.vectors[store.FeatureRole.CONTENT_UNIMODAL],
        train.vectors[store.FeatureRole.IMAGE_MULTIMODAL],
        t_txt,
        cfg.train,
    )
    al.save_head(head, out)
    with open(cfg.output_dir / ARTIFACTS["loss_curve"], "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(curve):
            fh.write(f"{epoch},{loss!r}\n")
    log.info("alignment trained: %d epochs, final loss %s", len(curve), curve[-1] if curve else "n/a")
    return head


def stage_decouple(
    cfg: RunConfig,
    joined: store.JoinedTable,
    head: al.AlignmentHead | None,
    force: bool,
    out_dir: Path | None = None,
    variant: str = "full",
) -> store.EmbeddingSet:
    """Produce the pure-style EmbeddingSet (+ alpha sidecar) for a variant.

    ``variant`` selects the feature combination:
      * ``full``: fused style/content with the aligned unimodal reference
      * ``img_only``: normalized multimodal image embedding, no projection
      * ``img_txt``: text-only content reference (no unimodal role)
    """
    out_dir = out_dir or cfg.output_dir
    out = out_dir / ARTIFACTS["s_pure"]
    alpha_path = out_dir / ARTIFACTS["alpha"]
    if out.exists() and alpha_path.exists() and not force:
        try:
            spure = store.load_embedding_set(out)
            log.info("decouple stage skipped (valid artifact %s exists)", out)
            return spure
        except store.EmbeddingFormatError as e:
            log.warning("existing s_pure artifact invalid (%s); recomputing", e)

    ids = [r.id for r in joined.records]
    b = np.asarray(joined.vectors[store.FeatureRole.IMAGE_MULTIMODAL], dtype=np.float64)
    model_id = f"sdec[{variant}]"

    if variant == "img_only":
        vecs, bad = dc.normalize_rows(b)
        if bad.size:
            raise StageError("decouple", f"zero multimodal rows: {[ids[i] for i in bad]}")
        alphas = np.zeros(len(ids))
    elif variant == "img_txt":
        a = joined.vectors.get(store.FeatureRole.STYLE_TEXT)
        d = joined.vectors.get(store.FeatureRole.CONTENT_TEXT)
        if a is None or d is None:
            raise StageError("decouple", "img_txt variant needs both text roles")
        s_r, bad = dc.normalize_rows(np.asarray(a, dtype=np.float64) + b)
        if bad.size:
            raise StageError("decouple", f"zero fused style rows: {[ids[i] for i in bad]}")
        c_r, bad = dc.normalize_rows(np.asarray(d, dtype=np.float64))
        if bad.size:
            raise StageError("decouple", f"zero content-text rows: {[ids[i] for i in bad]}")
        vecs, alphas = dc.project_rows(s_r, c_r, clamp_alpha=cfg.clamp_alpha)
    else:
        try:
            rows = dc.decouple_batch(
                joined, head, clamp_alpha=cfg.clamp_alpha, use_text=cfg.use_text
            )
        except dc.DecoupleError as e:
            raise StageError("decouple", str(e))
        vecs = np.stack([r.s_pure for r in rows]) if rows else b[:0]
        alphas = np.array([r.alpha for r in rows])

    spure = store.EmbeddingSet(
        model_id=model_id, dim=b.shape[1], ids=tuple(ids), data=vecs.astype(np.float32)
    )
    store.write_embedding_set(spure, out)
    with open(alpha_path, "w", encoding="utf-8") as fh:
        for i, id_ in enumerate(ids):
            fh.write(json.dumps({"id": id_, "alpha": float(alphas[i])}) + "\n")
    log.info("decoupled %d rows (variant=%s, mean alpha %.4f)", len(ids), variant,
             float(alphas.mean()) if len(ids) else float("nan"))
    return spure


def stage_retrieve(
    cfg: RunConfig,
    spure: store.EmbeddingSet,
    manifest: list[store.ManifestRecord],
    force: bool,
    out_dir: Path | None = None,
) -> Path:
    """Rank query-split vectors against the gallery split; write the TSV."""
    out_dir = out_dir or cfg.output_dir
    out = out_dir / ARTIFACTS["rankings"]
    if out.exists() and not force:
        log.info("retrieve stage skipped (artifact %s exists)", out)
        return out
    by_split: dict[str, list[str]] = {s: [] for s in store.VALID_SPLITS}
    present = set(spure.ids)
    for rec in manifest:
        if rec.id in present:
            by_split[rec.split].append(rec.id)
    if not by_split["gallery"]:
        raise StageError("retrieve", "no gallery rows after join")
    if not by_split["query"]:
        raise StageError("retrieve", "no query rows after join")

    idx = spure.index()
    gallery = store.EmbeddingSet(
        spure.model_id, spure.dim, tuple(by_split["gallery"]),
        spure.data[[idx[i] for i in by_split["gallery"]]],
    )
    queries = store.EmbeddingSet(
        spure.model_id, spure.dim, tuple(by_split["query"]),
        spure.data[[idx[i] for i in by_split["query"]]],
    )
    index = rt.build_index(gallery)
    ranked = rt.batch_retrieve(
        index, queries, k=max(cfg.ks), allow_self_match=cfg.allow_self_match
    )
    rt.dump_rankings(ranked, out)
    log.info("ranked %d queries against %d gallery rows", len(queries.ids), len(gallery.ids))
    return out


def read_rankings(path: str | Path) -> list[rt.RankedList]:
    """Parse a rankings TSV back into RankedLists (order preserved)."""
    out: list[rt.RankedList] = []
    current: str | None = None
    hits: list[tuple[str, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            qid, _rank, gid, score = line.rstrip("\n").split("\t")
            if qid != current:
                if current is not None:
                    out.append(rt.RankedList(current, tuple(hits)))
                current, hits = qid, []
            hits.append((gid, float(score)))
    if current is not None:
        out.append(rt.RankedList(current, tuple(hits)))
    return out


def _retrieval_metrics_from_rankings(
    ranked: list[rt.RankedList],
    gallery_ids: list[str],
    by_id: dict[str, store.ManifestRecord],
    spec: ev.RelevanceSpec,
    ks: tuple[int, ...],
    allow_self_match: bool,
) -> tuple[dict[str, float], dict[str, object]]:
    gallery_by_label: dict[str, set[str]] = {}
    for gid in gallery_ids:
        gallery_by_label.setdefault(getattr(by_id[gid], spec.label_field), set()).add(gid)
    ap_sums = {k: 0.0 for k in ks}
    r_sums = {k: 0 for k in ks}
    evaluated = skipped = 0
    selected = [
        rl for rl in ranked
        if spec.label_filter is None or by_id[rl.query_id].style == spec.label_filter
    ]
    if spec.label_filter is not None and not selected:
        raise ValueError(f"label_filter {spec.label_filter!r} matches no query")
    for rl in selected:
        relevant = set(
            gallery_by_label.get(getattr(by_id[rl.query_id], spec.label_field), set())
        )
        if not allow_self_match:
            relevant.discard(rl.query_id)
        if not relevant:
            skipped += 1
            continue
        evaluated += 1
        for k in ks:
            ap_sums[k] += ev.average_precision_at_k(rl, relevant, k)
            r_sums[k] += ev.recall_at_k(rl, relevant, k)
    if evaluated == 0:
        raise ValueError("no query has a relevant gallery item")
    metrics = {f"mAP@{k}": ap_sums[k] / evaluated for k in ks}
    metrics.update({f"R@{k}": r_sums[k] / evaluated for k in ks})
    meta = {
        "n_queries_evaluated": evaluated,
        "n_queries_without_relevant": skipped,
        "n_gallery": len(gallery_ids),
    }
    return metrics, meta


def stage_eval(
    cfg: RunConfig,
    spure: store.EmbeddingSet,
    manifest: list[store.ManifestRecord],
    rankings_path: Path,
    force: bool,
    out_dir: Path | None = None,
) -> ev.MetricsReport:
    """Aggregate retrieval, clustering, and rating metrics into the report."""
    out_dir = out_dir or cfg.output_dir
    report_path = out_dir / ARTIFACTS["report_json"]
    if report_path.exists() and not force:
        try:
            report = ev.MetricsReport.from_json(report_path.read_text(encoding="utf-8"))
            log.info("eval stage skipped (artifact %s exists)", report_path)
            return report
        except (json.JSONDecodeError, KeyError) as e:
            log.warning("existing report invalid (%s); recomputing", e)

    by_id = {r.id: r for r in manifest}
    ranked = read_rankings(rankings_path)
    present = set(spure.ids)
    gallery_ids = [r.id for r in manifest if r.split == "gallery" and r.id in present]

    metrics, meta = _retrieval_metrics_from_rankings(
        ranked, gallery_ids, by_id, cfg.relevance, cfg.ks, cfg.allow_self_match
    )
    notes: dict[str, object] = {}

    for value in cfg.breakdowns:
        bspec = ev.RelevanceSpec(cfg.relevance.label_field, value)
        try:
            bm, _ = _retrieval_metrics_from_rankings(
                ranked, gallery_ids, by_id, bspec, (cfg.ks[0],), cfg.allow_self_match
            )
            metrics[f"mAP@{cfg.ks[0]}[{value}]"] = bm[f"mAP@{cfg.ks[0]}"]
        except ValueError as e:
            notes[f"breakdown[{value}]"] = str(e)

    # clustering over the evaluation items (query + gallery splits)
    eval_ids = [
        r.id for r in manifest if r.split in ("query", "gallery") and r.id in present
    ]
    labels = [getattr(by_id[i], cfg.relevance.label_field) for i in eval_ids]
    n_labels = len(set(labels))
    if len(eval_ids) >= 2 and n_labels >= 1:
        idx = spure.index()
        x = spure.data[[idx[i] for i in eval_ids]]
        assign, _, inertia = ev.kmeans(x, n_labels, seed=cfg.seed)
        metrics["ACC"] = ev.clustering_accuracy(assign, labels)
        metrics["ARI"] = ev.adjusted_rand_index(assign, labels)
        notes["kmeans_inertia"] = inertia
        notes["kmeans_k"] = n_labels
    else:
        notes["clustering"] = "skipped: fewer than 2 evaluation rows"

    # rating alignment: per-style gallery prototypes vs human scores
    rated = [r for r in manifest if r.human_score is not None and r.id in present]
    if rated:
        idx = spure.index()
        protos: dict[str, np.ndarray] = {}
        for sty in sorted({r.style for r in rated}):
            members = [i for i in gallery_ids if by_id[i].style == sty]
            if members:
                mean = np.asarray(
                    spure.data[[idx[i] for i in members]], dtype=np.float64
                ).mean(axis=0)
                if np.linalg.norm(mean) > 1e-12:
                    protos[sty] = mean / np.linalg.norm(mean)
        predicted, actual = [], []
        skipped_rated = 0
        for r in rated:
            proto = protos.get(r.style)
            if proto is None:
                skipped_rated += 1
                continue
            v = np.asarray(spure.data[idx[r.id]], dtype=np.float64)
            v = v / np.linalg.norm(v)
            predicted.append(ev.style_score(v, proto))
            actual.append(r.human_score)
        if predicted:
            metrics["MAE"] = float(np.mean(np.abs(np.array(predicted) - np.array(actual))))
            try:
                metrics["spearman_rho"] = ev.spearman_rho(predicted, actual)
            except ValueError as e:
                notes["spearman_rho"] = f"undefined: {e}"
        notes["n_rated"] = len(predicted)
        if skipped_rated:
            notes["n_rated_without_prototype"] = skipped_rated
    meta.update(notes)
    meta["config_hash"] = cfg.config_hash()
    meta["model"] = spure.model_id
    meta["clamp_alpha"] = cfg.clamp_alpha

    report = ev.MetricsReport(metrics=metrics, metadata=meta)
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    (out_dir / ARTIFACTS["report_tsv"]).write_text(
        report_tsv([report]), encoding="utf-8"
    )
    return report


def report_tsv(reports: list[ev.MetricsReport]) -> str:
    """Tabular summary; retrieval columns as percentages with 1 decimal."""
    keys: list[str] = []
    for rep in reports:
        for k in rep.metrics:
            if k not in keys:
                keys.append(k)
    lines = ["\t".join(["model"] + keys)]
    for rep in reports:
        row = [str(rep.metadata.get("model", "?"))]
        for k in keys:
            v = rep.metrics.get(k)
            if v is None:
                row.append("-")
            elif k.startswith(("mAP@", "R@", "ACC", "ARI")):
                row.append(f"{100.0 * v:.1f}")
            else:
                row.append(f"{v:.4f}")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


_NONFATAL_ISSUES = ("absent from role", "use_text is enabled")


def _check_fatal(issues: list[str]) -> None:
    fatal = [i for i in issues if not any(m in i for m in _NONFATAL_ISSUES)]
    if fatal:
        raise ConfigError("validation failed:\n  " + "\n  ".join(fatal))
    for issue in issues:
        log.warning("validation: %s", issue)


def run_pipeline(cfg: RunConfig, force: bool = False) -> ev.MetricsReport:
    """Execute validate -> align -> decouple -> retrieve -> eval."""
    _check_fatal(validate_config(cfg))

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    manifest, _, joined = _load_inputs(cfg)
    try:
        head = stage_align(cfg, joined, force)
        spure = stage_decouple(cfg, joined, head, force)
        rankings = stage_retrieve(cfg, spure, manifest, force)
        return stage_eval(cfg, spure, manifest, rankings, force)
    except StageError:
        raise
    except (ValueError, RuntimeError) as e:
        raise StageError("pipeline", str(e))


# ---------------------------------------------------------------------------
# ablation grid


@dataclass(frozen=True)
class AblationRow:
    """One feature-combination run; clip_img is always on."""

    name: str
    clip_img: bool
    clip_txt: bool
    dino_raw: bool
    dino_trained: bool
    report: ev.MetricsReport = field(compare=False)

    def __post_init__(self) -> None:
        if not self.clip_img:
            raise ValueError("every ablation row includes the multimodal image features")


ABLATION_GRID: list[tuple[str, bool, bool, bool]] = [
    # (name, clip_txt, dino_raw, dino_trained)
    ("img_only", False, False, False),
    ("img_txt", True, False, False),
    ("img_dino_trained", False, False, True),
    ("img_txt_dino_raw", True, True, False),
    ("img_txt_dino_trained", True, False, True),
]


def run_ablation(cfg: RunConfig, force: bool = False) -> list[AblationRow]:
    """Run the reproducible feature-combination grid under one shared seed."""
    _check_fatal(validate_config(cfg))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    manifest, _, joined = _load_inputs(cfg)
    needs_head = any(trained for _, _, _, trained in ABLATION_GRID)
    head = stage_align(cfg, joined, force) if needs_head else None

    rows: list[AblationRow] = []
    for name, clip_txt, dino_raw, dino_trained in ABLATION_GRID:
        out_dir = cfg.output_dir / "ablate" / name
        out_dir.mkdir(parents=True, exist_ok=True)
        row_cfg = replace(cfg, use_text=clip_txt)
        if name == "img_only":
            variant, row_head = "img_only", None
        elif name == "img_txt":
            variant, row_head = "img_txt", None
        else:
            variant = "full"
            row_head = None if dino_raw else head
        spure = stage_decouple(row_cfg, joined, row_head, force, out_dir, variant)
        rankings = stage_retrieve(row_cfg, spure, manifest, force, out_dir)
        report = stage_eval(row_cfg, spure, manifest, rankings, force, out_dir)
        rows.append(
            AblationRow(
                name=name,
                clip_img=True,
                clip_txt=clip_txt,
                dino_raw=dino_raw,
                dino_trained=dino_trained,
                report=report,
            )
        )
    (cfg.output_dir / "ablation.tsv").write_text(ablation_tsv(cfg, rows), encoding="utf-8")
    return rows


def ablation_tsv(cfg: RunConfig, rows: list[AblationRow]) -> str:
    """Feature-flag grid with the headline retrieval columns."""
    metric_cols = [f"mAP@{k}" for k in cfg.ks[:2]]
    if len(cfg.ks) >= 2:
        metric_cols.append(f"R@{cfg.ks[1]}")
    header = ["clip_img", "clip_txt", "dino_raw", "dino_trained"] + metric_cols
    lines = ["\t".join(header)]
    for row in rows:
        cells = [
            "x" if row.clip_img else "",
            "x" if row.clip_txt else "",
            "x" if row.dino_raw else "",
            "x" if row.dino_trained else "",
        ]
        for col in metric_cols:
            v = row.report.metrics.get(col)
            cells.append("-" if v is None else f"{100.0 * v:.1f}")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"

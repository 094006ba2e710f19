"""Command-line entry point.

Subcommands mirror the pipeline stages (validate, align, decouple,
retrieve, eval) plus the two orchestrators (pipeline, ablate). Stage
commands re-run only what is missing: every stage reuses an existing
valid artifact unless --force is given.

Exit codes: 0 success, 2 config/validation error, 3 runtime/data error.
SDEC_LOG (debug|info|warning|error) controls verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from filelock import FileLock, Timeout

from . import pipeline as pl
from . import store

log = logging.getLogger("sdec")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _setup_logging() -> None:
    level = os.environ.get("SDEC_LOG", "info").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdec",
        description="Disentangle style from content in precomputed embeddings "
        "and evaluate the result.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("validate", "check files, dimensions and manifest joins"),
        ("align", "train the unimodal-to-multimodal head"),
        ("decouple", "produce pure-style vectors (runs align if needed)"),
        ("retrieve", "rank queries against the gallery (runs prior stages if needed)"),
        ("eval", "compute the metrics report (runs prior stages if needed)"),
        ("pipeline", "run every stage in order"),
        ("ablate", "run the feature-combination grid"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, metavar="PATH", help="JSON run config")
        p.add_argument("--force", action="store_true", help="recompute existing artifacts")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--output", default=None, metavar="DIR", help="override output_dir")
        p.add_argument(
            "--clamp-alpha", action="store_true", default=None,
            help="clip the confidence weight to [0, 1]",
        )
        p.add_argument(
            "--label-field", choices=["artist", "style"], default=None,
            help="override the relevance label",
        )
        p.add_argument(
            "--allow-self-match", action="store_true", default=None,
            help="keep a query's own gallery row among its candidates",
        )
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.output is not None:
        out["output_dir"] = args.output
    if args.clamp_alpha is not None:
        out["clamp_alpha"] = args.clamp_alpha
    if args.label_field is not None:
        out["label_field"] = args.label_field
    if args.allow_self_match is not None:
        out["allow_self_match"] = args.allow_self_match
    return out


def _cmd_validate(cfg: pl.RunConfig) -> int:
    issues = pl.validate_config(cfg)
    for issue in issues:
        print(f"issue: {issue}")
    print(f"{len(issues)} issue(s) found")
    return EXIT_OK if not issues else EXIT_CONFIG


def _run_stages(cfg: pl.RunConfig, upto: str, force: bool) -> int:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    pl._check_fatal(pl.validate_config(cfg))
    manifest, _, joined = pl._load_inputs(cfg)
    head = pl.stage_align(cfg, joined, force)
    if upto == "align":
        print(f"head written to {cfg.output_dir / pl.ARTIFACTS['head']}")
        return EXIT_OK
    spure = pl.stage_decouple(cfg, joined, head, force)
    if upto == "decouple":
        print(f"pure-style vectors written to {cfg.output_dir / pl.ARTIFACTS['s_pure']}")
        return EXIT_OK
    rankings = pl.stage_retrieve(cfg, spure, manifest, force)
    if upto == "retrieve":
        print(f"rankings written to {rankings}")
        return EXIT_OK
    report = pl.stage_eval(cfg, spure, manifest, rankings, force)
    print(report.to_json())
    return EXIT_OK


def _cmd_ablate(cfg: pl.RunConfig, force: bool) -> int:
    rows = pl.run_ablation(cfg, force)
    print(pl.ablation_tsv(cfg, rows), end="")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        cfg = pl.load_config(args.config, _overrides(args))
    except (pl.ConfigError, store.ManifestError, store.EmbeddingFormatError) as e:
        log.error("%s", e)
        return EXIT_CONFIG

    if args.command == "validate":
        return _cmd_validate(cfg)

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(cfg.output_dir / ".sdec.lock")
    try:
        with lock.acquire(timeout=0):
            if args.command == "ablate":
                return _cmd_ablate(cfg, args.force)
            if args.command == "pipeline":
                report = pl.run_pipeline(cfg, args.force)
                print(report.to_json())
                return EXIT_OK
            return _run_stages(cfg, args.command, args.force)
    except Timeout:
        log.error("another sdec run holds the lock in %s", cfg.output_dir)
        return EXIT_RUNTIME
    except pl.ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except (pl.StageError, store.ManifestError, store.EmbeddingFormatError) as e:
        log.error("%s", e)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError, OSError) as e:
        log.error("%s", e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

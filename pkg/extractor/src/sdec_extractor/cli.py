"""Command-line entry point: `sdec-extract extract --config PATH`."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import ExtractorConfigError, load_extractor_config
from .encoders import EncoderLoadError
from .extract import run_extract


def _setup_logging() -> None:
    level = os.environ.get("SDEC_LOG", "info").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="sdec-extract",
        description="Produce manifest + embedding files from an image directory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="run the extraction")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument(
        "--roles",
        default="a,b,c,d",
        help="comma-separated subset of a,b,c,d (default: all)",
    )
    args = parser.parse_args(argv)

    try:
        config = load_extractor_config(args.config)
        roles = [r.strip() for r in args.roles.split(",") if r.strip()]
        summary = run_extract(config, roles)
    except (ExtractorConfigError, ValueError) as e:
        logging.getLogger("sdec_extractor").error("%s", e)
        return 2
    except (EncoderLoadError, OSError) as e:
        logging.getLogger("sdec_extractor").error("%s", e)
        return 3
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())

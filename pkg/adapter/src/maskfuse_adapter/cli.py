"""Adapter CLI: ``maskfuse-adapter export --config <file>``."""
from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .config import AdapterError, load_config
from .export import run_export

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskfuse-adapter",
        description="Export detector/segmenter outputs in the engine's wire formats",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="run both models over an image folder")
    p.add_argument("--config", required=True, help="adapter config JSON")
    p.set_defaults(func=cmd_export)
    return parser


def cmd_export(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    result = run_export(cfg)
    print(
        f"exported {result.n_detections} detections / {result.n_masks} masks "
        f"for {result.n_images} images -> {result.manifest_path}"
    )
    for image_id, error in result.failures:
        print(f"  failed {image_id}: {error}", file=sys.stderr)
    return EXIT_PARTIAL if result.failures else EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command-line harness: fuse, eval, the three ablation sweeps, synth, colorize.

Exit codes: 0 success, 2 configuration error, 3 partial data failure (some
images could not be processed; the run still completes and reports them).
Parallelism defaults to the MASKFUSE_JOBS environment variable.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from . import codec, runner, synth
from .codec import CodecError, DatasetManifest
from .core import ClassRegistry, FusionOrder, LabeledMask, ValidationError, m4d_registry
from .fusion import (
    FilterConfig,
    FusionStrategy,
    OrderedFusion,
    RandomFusion,
    all_fusion_orders,
    filter_detections,
    ordered_mask_fusion,
)
from .metrics import ConfusionMatrix, confusion_accumulate, summarize
from .oracle import NoiseSpec, extract_gt_boxes, oracle_segment, perturb_detections
from .runner import (
    dataset_digest,
    eval_maps_in_memory,
    fuse_dataset,
    fuse_dataset_cached,
    group_detections,
    strategy_label,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

REFERENCE_THRESHOLD = 0.2  # flagged in threshold sweeps as the known peak region


class ConfigError(Exception):
    """Bad flags or unusable shared inputs; maps to exit code 2."""


def _default_jobs() -> int:
    raw = os.environ.get("MASKFUSE_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parse_strategy(text: str, registry: ClassRegistry) -> FusionStrategy:
    """Parse 'ordered:<comma-list of names or ids>' or 'random:<seed>'."""
    kind, sep, rest = text.partition(":")
    if not sep or not rest:
        raise ConfigError(f"strategy {text!r} must be ordered:<list> or random:<seed>")
    if kind == "random":
        try:
            seed = int(rest)
        except ValueError:
            raise ConfigError(f"random seed {rest!r} is not an integer") from None
        try:
            return RandomFusion(seed)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None
    if kind == "ordered":
        return OrderedFusion(_parse_order(rest, registry))
    raise ConfigError(f"unknown strategy kind {kind!r}")


def _parse_order(text: str, registry: ClassRegistry) -> FusionOrder:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("empty fusion order")
    try:
        if all(p.lstrip("-").isdigit() for p in parts):
            return FusionOrder.from_ids(registry, (int(p) for p in parts))
        return FusionOrder.from_names(registry, parts)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def _load_manifest(path: str) -> DatasetManifest:
    try:
        return codec.load_manifest(path)
    except CodecError as exc:
        raise ConfigError(str(exc)) from None


def _load_detections(manifest: DatasetManifest):
    try:
        dets = codec.read_detections(manifest.detections_path(), manifest.registry)
    except CodecError as exc:
        raise ConfigError(str(exc)) from None
    return group_detections(dets)


def _write_summary(path: Path, payload: dict) -> None:
    codec.atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_float_list(text: str, what: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"bad {what} list {text!r}") from None


def _parse_class_mapping(text: str, registry: ClassRegistry, cast):
    """'3' applies to all classes; 'ship=3,land=1' is per class."""
    if "=" not in text:
        return cast(text)
    mapping = {}
    for part in text.split(","):
        name, sep, value = part.partition("=")
        if not sep:
            raise ConfigError(f"bad per-class entry {part!r}")
        mapping[registry.id_of(name.strip())] = cast(value)
    return mapping


def _check_threshold(threshold: float) -> None:
    try:
        FilterConfig(threshold)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def _write_reports(rows, out_dir: Path, stem: str, fmt: str, **kwargs) -> None:
    """Write <stem>.csv / <stem>.json per --format (both by default)."""
    if fmt in ("csv", "both"):
        codec.write_report(rows, out_dir / f"{stem}.csv", format="csv",
                           extras=kwargs.get("extras"))
    if fmt in ("json", "both"):
        codec.write_report(rows, out_dir / f"{stem}.json", format="json", **kwargs)


# --------------------------------------------------------------------------
# Commands


def cmd_fuse(args: argparse.Namespace) -> int:
    manifest = _load_manifest(args.manifest)
    strategy = parse_strategy(args.strategy, manifest.registry)
    _check_threshold(args.threshold)
    dets_by_image = _load_detections(manifest)
    out = Path(args.out)
    maps_dir = out / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)

    result = fuse_dataset(
        manifest,
        dets_by_image,
        args.threshold,
        strategy,
        clip_to_box=args.clip_to_box,
        jobs=args.jobs,
        out_dir=maps_dir,
        keep_maps=False,
    )
    summary = {
        "images": len(manifest.images),
        "fused": len(manifest.images) - len(result.failures),
        "failures": [
            {"image_id": image_id, "error": error}
            for image_id, error in result.failures
        ],
        "strategy": strategy_label(strategy, manifest),
        "threshold": args.threshold,
        "clip_to_box": args.clip_to_box,
    }
    _write_summary(out / "fuse_summary.json", summary)
    print(f"fused {summary['fused']}/{summary['images']} images -> {maps_dir}")
    for image_id, error in result.failures:
        print(f"  failed {image_id}: {error}", file=sys.stderr)
    return EXIT_PARTIAL if result.failures else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    manifest = _load_manifest(args.manifest)
    if not manifest.has_gt:
        raise ConfigError("manifest declares no ground-truth maps; nothing to evaluate")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    result = runner.eval_dataset(manifest, Path(args.pred), jobs=args.jobs)
    if result.evaluated == 0:
        raise ConfigError("no image could be evaluated (missing predictions?)")
    report = summarize(result.matrix, manifest.registry)
    metadata = {
        "evaluated": result.evaluated,
        "skipped": [
            {"image_id": image_id, "reason": reason}
            for image_id, reason in result.skipped
        ],
    }
    rows = [("dataset", report)]
    _write_reports(rows, out, "report", args.format, metadata=metadata)
    _write_summary(
        out / "confusion.json",
        {
            "class_names": list(manifest.registry.names),
            "cells": result.matrix.cells.tolist(),
        },
    )
    print(f"mIoU {report.miou * 100:.2f}  mF1 {report.mf1 * 100:.2f}  -> {out}")
    return EXIT_PARTIAL if result.skipped else EXIT_OK


def _sweep_strategies(args, registry: ClassRegistry) -> list[FusionStrategy]:
    if args.orders.strip() == "all":
        strategies: list[FusionStrategy] = [
            OrderedFusion(order) for order in all_fusion_orders(registry)
        ]
        strategies.append(RandomFusion(args.seed))
        return strategies
    strategies = []
    seen = set()
    for chunk in args.orders.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if chunk.startswith("random:"):
            strategy = parse_strategy(chunk, registry)
        else:
            strategy = OrderedFusion(_parse_order(chunk, registry))
        key = (
            strategy.order.priority
            if isinstance(strategy, OrderedFusion)
            else ("random", strategy.seed)
        )
        if key in seen:
            raise ConfigError(f"duplicate order {chunk!r}")
        seen.add(key)
        strategies.append(strategy)
    if not strategies:
        raise ConfigError("no orders given")
    return strategies


def cmd_sweep_order(args: argparse.Namespace) -> int:
    manifest = _load_manifest(args.manifest)
    if not manifest.has_gt:
        raise ConfigError("order sweep needs ground-truth maps in the manifest")
    strategies = _sweep_strategies(args, manifest.registry)
    _check_threshold(args.threshold)
    dets_by_image = _load_detections(manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = dataset_digest(manifest, dets_by_image)

    rows = []
    any_skipped = False
    for strategy in strategies:
        fused = fuse_dataset_cached(
            manifest,
            dets_by_image,
            args.threshold,
            strategy,
            clip_to_box=args.clip_to_box,
            jobs=args.jobs,
            cache_root=out / "cache",
            input_digest=digest,
        )
        evaluation = eval_maps_in_memory(manifest, fused.maps)
        any_skipped = any_skipped or bool(evaluation.skipped) or bool(fused.failures)
        report = summarize(evaluation.matrix, manifest.registry)
        rows.append((strategy_label(strategy, manifest), report))

    rows.sort(key=lambda r: (-r[1].miou, r[0]))
    # Identical metric rows form an equivalence class (same fused maps).
    signature_to_class: dict[tuple, str] = {}
    extras: list[dict[str, object]] = []
    for label, report in rows:
        signature = tuple(
            None if v is None else round(v, 12)
            for _, v in sorted(report.per_class_iou.items())
        )
        if signature not in signature_to_class:
            signature_to_class[signature] = chr(ord("A") + len(signature_to_class))
        extras.append({"equiv_class": signature_to_class[signature]})

    _write_reports(rows, out, "order_sweep", args.format, extras=extras)
    best_label, best = rows[0]
    print(
        f"{len(rows)} strategies, {len(signature_to_class)} equivalence classes; "
        f"best {best_label} mIoU {best.miou * 100:.2f}"
    )
    return EXIT_PARTIAL if any_skipped else EXIT_OK


def cmd_sweep_threshold(args: argparse.Namespace) -> int:
    manifest = _load_manifest(args.manifest)
    if not manifest.has_gt:
        raise ConfigError("threshold sweep needs ground-truth maps in the manifest")
    strategy = parse_strategy(args.strategy, manifest.registry)
    thresholds = _parse_float_list(args.thresholds, "threshold")
    if any(not 0.0 <= t <= 1.0 for t in thresholds):
        raise ConfigError("thresholds must lie in [0, 1]")
    dets_by_image = _load_detections(manifest)
    all_dets = [d for dets in dets_by_image.values() for d in dets]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = dataset_digest(manifest, dets_by_image)

    rows = []
    extras: list[dict[str, object]] = []
    survivor_counts = []
    any_skipped = False
    for threshold in thresholds:
        fused = fuse_dataset_cached(
            manifest,
            dets_by_image,
            threshold,
            strategy,
            clip_to_box=args.clip_to_box,
            jobs=args.jobs,
            cache_root=out / "cache",
            input_digest=digest,
        )
        evaluation = eval_maps_in_memory(manifest, fused.maps)
        any_skipped = any_skipped or bool(evaluation.skipped) or bool(fused.failures)
        report = summarize(evaluation.matrix, manifest.registry)
        survivors = len(filter_detections(all_dets, FilterConfig(threshold)))
        survivor_counts.append(survivors)
        rows.append((f"t={threshold:.2f}", report))
        extras.append(
            {
                "survivors": survivors,
                "reference": "peak"
                if abs(threshold - REFERENCE_THRESHOLD) < 1e-9
                else "",
            }
        )

    # Survivor counts must be monotone nonincreasing along the sweep.
    ordered_pairs = sorted(zip(thresholds, survivor_counts))
    for (t1, c1), (t2, c2) in zip(ordered_pairs, ordered_pairs[1:]):
        if c2 > c1:
            raise AssertionError(
                f"survivor count rose from {c1} at t={t1} to {c2} at t={t2}"
            )

    _write_reports(rows, out, "threshold_sweep", args.format, extras=extras)
    best = max(rows, key=lambda r: r[1].miou)
    print(f"best {best[0]} mIoU {best[1].miou * 100:.2f}")
    return EXIT_PARTIAL if any_skipped else EXIT_OK


def cmd_gtbox_study(args: argparse.Namespace) -> int:
    manifest = _load_manifest(args.manifest)
    if not manifest.has_gt:
        raise ConfigError("gt-box study needs ground-truth maps in the manifest")
    sigmas = _parse_float_list(args.sigmas, "sigma")
    if any(s < 0 for s in sigmas):
        raise ConfigError("sigmas must be >= 0")
    if args.order:
        order = _parse_order(args.order, manifest.registry)
    else:
        order = FusionOrder(manifest.registry.foreground_ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    extras: list[dict[str, object]] = []
    for sigma in sigmas:
        matrix = ConfusionMatrix.zeros(manifest.registry.n_classes)
        for img in manifest.images:
            gt = codec.read_semantic(manifest.gt_map_path(img.image_id))
            dets = extract_gt_boxes(
                gt, manifest.registry, args.min_area, image_id=img.image_id
            )
            if sigma > 0:
                dets = perturb_detections(
                    dets,
                    NoiseSpec(box_jitter_sigma=sigma, seed=args.seed),
                    img.width,
                    img.height,
                )
            labeled = [
                LabeledMask(
                    mask=oracle_segment(gt, det, NoiseSpec()),
                    category=det.category,
                    score=det.score,
                    source_index=index,
                )
                for index, det in enumerate(dets)
            ]
            fused = ordered_mask_fusion(labeled, order, img.width, img.height)
            confusion_accumulate(fused, gt, matrix)
        report = summarize(matrix, manifest.registry)
        label = "exact_box" if sigma == 0 else f"jitter_sigma={sigma:g}"
        rows.append((label, report))
        extras.append({"sigma": sigma})

    _write_reports(rows, out, "gtbox_study", args.format, extras=extras)
    for label, report in rows:
        print(f"{label}: mIoU {report.miou * 100:.2f}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    registry = (
        m4d_registry()
        if not args.classes
        else ClassRegistry(tuple(p.strip() for p in args.classes.split(",")))
    )
    try:
        shapes = _parse_class_mapping(args.shapes_per_class, registry, int)
        scale = _parse_class_mapping(args.size_scale, registry, float)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    cfg = synth.SynthConfig(
        out_dir=Path(args.out),
        n_images=args.images,
        width=args.width,
        height=args.height,
        seed=args.seed,
        registry=registry,
        shapes_per_class=shapes,
        overlap_bias=args.overlap_bias,
        size_scale=scale,
        min_area=args.min_area,
        morph_radius=args.morph_radius,
        boundary_flip_prob=args.flip_prob,
        box_jitter_sigma=args.box_jitter_sigma,
        score_noise_sigma=args.score_noise_sigma,
        score_from_quality=args.score_from_quality,
    )
    try:
        manifest = synth.build_dataset(cfg)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    print(f"wrote {len(manifest.images)} images -> {args.out}/manifest.json")
    return EXIT_OK


def cmd_colorize(args: argparse.Namespace) -> int:
    palette = codec.load_palette(args.palette)
    maps_dir = Path(args.maps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for path in sorted(maps_dir.glob("*.png")):
        smap = codec.read_semantic(path)
        codec.write_semantic_color(smap, palette, out / path.name)
        count += 1
    if count == 0:
        raise ConfigError(f"no .png maps found in {maps_dir}")
    print(f"colorized {count} maps -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, help="dataset manifest JSON")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--jobs",
        type=int,
        default=_default_jobs(),
        help="parallel workers (default: MASKFUSE_JOBS or 1)",
    )
    parser.add_argument(
        "--format",
        choices=("csv", "json", "both"),
        default="both",
        help="report format(s) to write",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskfuse",
        description="Ordered mask fusion engine and evaluation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse detections+masks into semantic maps")
    _add_common(p)
    p.add_argument("--strategy", required=True, help="ordered:<list> or random:<seed>")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--clip-to-box", action="store_true")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True, help="directory of <image_id>.png maps")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-order", help="metric row per fusion order")
    _add_common(p)
    p.add_argument(
        "--orders",
        default="all",
        help="'all' (every permutation + random) or ';'-separated comma lists",
    )
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0, help="seed for the random row")
    p.add_argument("--clip-to-box", action="store_true")
    p.set_defaults(func=cmd_sweep_order)

    p = sub.add_parser("sweep-threshold", help="metric row per score threshold")
    _add_common(p)
    p.add_argument("--strategy", required=True)
    p.add_argument(
        "--thresholds",
        default="0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
        help="comma-separated thresholds in [0, 1]",
    )
    p.add_argument("--clip-to-box", action="store_true")
    p.set_defaults(func=cmd_sweep_threshold)

    p = sub.add_parser("gtbox-study", help="exact vs jittered ground-truth boxes")
    _add_common(p)
    p.add_argument("--sigmas", default="0,2,5", help="box jitter sigmas, 0 = exact")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-area", type=int, default=1)
    p.add_argument("--order", default="", help="fusion order (default: id order)")
    p.set_defaults(func=cmd_gtbox_study)

    p = sub.add_parser("synth", help="generate a synthetic oracle dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, default=20)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", default="", help="comma list, background first")
    p.add_argument("--shapes-per-class", default="1", help="count or name=count list")
    p.add_argument("--size-scale", default="1.0", help="scale or name=scale list")
    p.add_argument("--overlap-bias", type=float, default=0.5)
    p.add_argument("--min-area", type=int, default=1)
    p.add_argument("--morph-radius", type=int, default=0)
    p.add_argument("--flip-prob", type=float, default=0.0)
    p.add_argument("--box-jitter-sigma", type=float, default=0.0)
    p.add_argument("--score-noise-sigma", type=float, default=0.0)
    p.add_argument("--score-from-quality", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("colorize", help="palette-colorize semantic maps")
    p.add_argument("--maps", required=True)
    p.add_argument("--palette", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_colorize)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CodecError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

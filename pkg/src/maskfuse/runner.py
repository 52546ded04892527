"""Dataset-level execution: parallel fuse/eval over manifest images.

Workers are pure functions of their task, so results are independent of
scheduling and of the parallelism degree.  Fused maps for sweeps are cached
content-addressed by (input digest, strategy, threshold, clip flag).
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import codec
from .codec import CodecError, DatasetManifest
from .core import Detection, FusionOrder, SemanticMap, ValidationError
from .fusion import (
    FilterConfig,
    FusionStrategy,
    OrderedFusion,
    RandomFusion,
    derive_image_seed,
    fuse_pipeline,
)
from .metrics import ConfusionMatrix, confusion_accumulate


def strategy_label(strategy: FusionStrategy, manifest: DatasetManifest) -> str:
    if isinstance(strategy, RandomFusion):
        return f"random:{strategy.seed}"
    names = strategy.order.names(manifest.registry)
    return ",".join(names)


def group_detections(dets: Sequence[Detection]) -> dict[str, list[Detection]]:
    """Group by image id, preserving file order (mask index = position)."""
    grouped: dict[str, list[Detection]] = {}
    for det in dets:
        grouped.setdefault(det.image_id, []).append(det)
    return grouped


# --------------------------------------------------------------------------
# Fuse


@dataclass(frozen=True)
class _FuseTask:
    image_id: str
    width: int
    height: int
    dets: tuple[Detection, ...]
    mask_paths: tuple[str, ...]
    threshold: float
    clip_to_box: bool
    order_ids: tuple[int, ...] | None  # None = random strategy
    run_seed: int | None
    out_path: str | None
    return_labels: bool


@dataclass(frozen=True)
class _FuseOutcome:
    image_id: str
    error: str | None = None
    labels: bytes | None = None
    shape: tuple[int, int] | None = None


def _run_fuse_task(task: _FuseTask) -> _FuseOutcome:
    try:
        masks = {}
        for index, det in enumerate(task.dets):
            if det.score <= task.threshold:
                continue
            masks[index] = codec.read_mask(task.mask_paths[index])
        strategy: FusionStrategy
        if task.order_ids is not None:
            strategy = OrderedFusion(FusionOrder(task.order_ids))
        else:
            assert task.run_seed is not None
            strategy = RandomFusion(derive_image_seed(task.run_seed, task.image_id))
        fused = fuse_pipeline(
            task.dets,
            masks,
            FilterConfig(task.threshold),
            strategy,
            task.width,
            task.height,
            clip_to_box=task.clip_to_box,
        )
        if task.out_path is not None:
            codec.write_semantic(fused, task.out_path)
        if task.return_labels:
            return _FuseOutcome(
                task.image_id,
                labels=fused.labels.tobytes(),
                shape=fused.labels.shape,
            )
        return _FuseOutcome(task.image_id)
    except (CodecError, ValidationError, OSError) as exc:
        return _FuseOutcome(task.image_id, error=str(exc))


def _run_parallel(fn: Callable, tasks: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


@dataclass
class FuseResult:
    maps: dict[str, SemanticMap]
    failures: list[tuple[str, str]]  # (image_id, error), sorted by image id


def fuse_dataset(
    manifest: DatasetManifest,
    dets_by_image: Mapping[str, Sequence[Detection]],
    threshold: float,
    strategy: FusionStrategy,
    *,
    clip_to_box: bool = False,
    jobs: int = 1,
    out_dir: Path | None = None,
    keep_maps: bool = True,
) -> FuseResult:
    """Fuse every manifest image; failures are collected, not fatal.

    For the random strategy the per-image seed is derived from the run seed
    and the image id, so output never depends on scheduling.
    """
    order_ids: tuple[int, ...] | None = None
    run_seed: int | None = None
    if isinstance(strategy, OrderedFusion):
        strategy.order.validate_for(manifest.registry)
        order_ids = strategy.order.priority
    else:
        run_seed = strategy.seed

    tasks = []
    for img in manifest.images:
        dets = tuple(dets_by_image.get(img.image_id, ()))
        mask_paths = tuple(
            str(manifest.mask_path(img.image_id, i)) for i in range(len(dets))
        )
        out_path = str(out_dir / f"{img.image_id}.png") if out_dir is not None else None
        tasks.append(
            _FuseTask(
                image_id=img.image_id,
                width=img.width,
                height=img.height,
                dets=dets,
                mask_paths=mask_paths,
                threshold=threshold,
                clip_to_box=clip_to_box,
                order_ids=order_ids,
                run_seed=run_seed,
                out_path=out_path,
                return_labels=keep_maps,
            )
        )
    outcomes = _run_parallel(_run_fuse_task, tasks, jobs)

    maps: dict[str, SemanticMap] = {}
    failures: list[tuple[str, str]] = []
    for outcome in outcomes:
        if outcome.error is not None:
            failures.append((outcome.image_id, outcome.error))
        elif outcome.labels is not None:
            arr = np.frombuffer(outcome.labels, dtype=np.uint8).reshape(outcome.shape)
            maps[outcome.image_id] = SemanticMap(arr.copy())
    failures.sort()
    return FuseResult(maps=maps, failures=failures)


# --------------------------------------------------------------------------
# Eval


@dataclass(frozen=True)
class _EvalTask:
    image_id: str
    gt_path: str
    pred_path: str
    n_classes: int


@dataclass(frozen=True)
class _EvalOutcome:
    image_id: str
    error: str | None = None
    cells: bytes | None = None


def _run_eval_task(task: _EvalTask) -> _EvalOutcome:
    try:
        gt = codec.read_semantic(task.gt_path)
        pred = codec.read_semantic(task.pred_path)
        acc = ConfusionMatrix.zeros(task.n_classes)
        confusion_accumulate(pred, gt, acc)
        return _EvalOutcome(task.image_id, cells=acc.cells.tobytes())
    except (CodecError, ValidationError, OSError) as exc:
        return _EvalOutcome(task.image_id, error=str(exc))


@dataclass
class EvalResult:
    matrix: ConfusionMatrix
    skipped: list[tuple[str, str]]  # (image_id, reason), sorted
    evaluated: int


def eval_dataset(
    manifest: DatasetManifest,
    pred_dir: Path,
    *,
    jobs: int = 1,
) -> EvalResult:
    """Accumulate one dataset confusion matrix of predictions vs ground truth."""
    n = manifest.registry.n_classes
    tasks = [
        _EvalTask(
            image_id=img.image_id,
            gt_path=str(manifest.gt_map_path(img.image_id)),
            pred_path=str(pred_dir / f"{img.image_id}.png"),
            n_classes=n,
        )
        for img in manifest.images
    ]
    outcomes = _run_parallel(_run_eval_task, tasks, jobs)
    total = ConfusionMatrix.zeros(n)
    skipped: list[tuple[str, str]] = []
    evaluated = 0
    for outcome in outcomes:
        if outcome.error is not None:
            skipped.append((outcome.image_id, outcome.error))
        else:
            cells = np.frombuffer(outcome.cells, dtype=np.int64).reshape(n, n)
            total = total.merge(ConfusionMatrix(cells.copy()))
            evaluated += 1
    skipped.sort()
    return EvalResult(matrix=total, skipped=skipped, evaluated=evaluated)


def eval_maps_in_memory(
    manifest: DatasetManifest,
    maps: Mapping[str, SemanticMap],
) -> EvalResult:
    """Like :func:`eval_dataset` but against already-fused in-memory maps."""
    n = manifest.registry.n_classes
    total = ConfusionMatrix.zeros(n)
    skipped: list[tuple[str, str]] = []
    evaluated = 0
    for img in manifest.images:
        pred = maps.get(img.image_id)
        if pred is None:
            skipped.append((img.image_id, "no fused map"))
            continue
        try:
            gt = codec.read_semantic(manifest.gt_map_path(img.image_id))
            confusion_accumulate(pred, gt, total)
            evaluated += 1
        except (CodecError, ValidationError, OSError) as exc:
            skipped.append((img.image_id, str(exc)))
    skipped.sort()
    return EvalResult(matrix=total, skipped=skipped, evaluated=evaluated)


# --------------------------------------------------------------------------
# Content-addressed fusion cache (sweeps re-fuse the same inputs many times)


def dataset_digest(
    manifest: DatasetManifest,
    dets_by_image: Mapping[str, Sequence[Detection]],
) -> str:
    """Digest of everything fusion consumes: detections plus mask bytes."""
    h = hashlib.blake2b(digest_size=16)
    for img in manifest.images:
        h.update(f"{img.image_id}:{img.width}x{img.height}".encode())
        dets = dets_by_image.get(img.image_id, ())
        for index, det in enumerate(dets):
            h.update(
                f"{det.category}:{det.bbox.as_tuple()}:{det.score!r}".encode()
            )
            mask_path = manifest.mask_path(img.image_id, index)
            try:
                h.update(mask_path.read_bytes())
            except OSError:
                h.update(b"<missing>")
    return h.hexdigest()


def fuse_dataset_cached(
    manifest: DatasetManifest,
    dets_by_image: Mapping[str, Sequence[Detection]],
    threshold: float,
    strategy: FusionStrategy,
    *,
    clip_to_box: bool,
    jobs: int,
    cache_root: Path,
    input_digest: str,
) -> FuseResult:
    """Fuse with reuse: identical (inputs, strategy, threshold) hits the cache."""
    label = strategy_label(strategy, manifest)
    key_src = json.dumps(
        {
            "digest": input_digest,
            "strategy": label,
            "threshold": threshold,
            "clip_to_box": clip_to_box,
        },
        sort_keys=True,
    )
    key = hashlib.blake2b(key_src.encode(), digest_size=10).hexdigest()
    entry = cache_root / key
    meta_path = entry / "meta.json"

    if meta_path.exists():
        try:
            if json.loads(meta_path.read_text()) == json.loads(key_src):
                maps = {
                    img.image_id: codec.read_semantic(entry / f"{img.image_id}.png")
                    for img in manifest.images
                    if (entry / f"{img.image_id}.png").exists()
                }
                failures = json.loads((entry / "failures.json").read_text())
                return FuseResult(
                    maps=maps, failures=[tuple(f) for f in failures]
                )
        except (CodecError, ValueError, OSError):
            pass  # stale or corrupt entry: refuse silently and re-fuse

    entry.mkdir(parents=True, exist_ok=True)
    result = fuse_dataset(
        manifest,
        dets_by_image,
        threshold,
        strategy,
        clip_to_box=clip_to_box,
        jobs=jobs,
        out_dir=entry,
        keep_maps=True,
    )
    codec.atomic_write_text(
        entry / "failures.json", json.dumps(result.failures, sort_keys=True)
    )
    codec.atomic_write_text(meta_path, key_src)
    return result

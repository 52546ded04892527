"""Detection filtering and mask fusion into semantic maps.

Two merge policies share one first-wins fill over a zero-initialized canvas:
ordered fusion paints masks sorted by a category priority permutation, the
random baseline paints them in a seeded shuffle.  They differ exactly and
only in ordering policy.
"""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

from . import kernels
from .core import (
    BinaryMask,
    BoundingBox,
    ClassRegistry,
    Detection,
    FusionOrder,
    LabeledMask,
    SemanticMap,
    ValidationError,
    mask_encode,
)


@dataclass(frozen=True)
class FilterConfig:
    """Score filter; survivors need score strictly greater than the threshold."""

    score_threshold: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValidationError(f"threshold {self.score_threshold} outside [0, 1]")


@dataclass(frozen=True)
class OrderedFusion:
    """Fuse by a fixed category priority order."""

    order: FusionOrder


@dataclass(frozen=True)
class RandomFusion:
    """Fuse in a seeded pseudorandom mask order (ablation baseline)."""

    seed: int

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed {self.seed} outside 64-bit unsigned range")


FusionStrategy = Union[OrderedFusion, RandomFusion]


def filter_detections(dets: Sequence[Detection], cfg: FilterConfig) -> list[Detection]:
    """Keep detections with score strictly above the threshold, in input order."""
    return [d for d in dets if d.score > cfg.score_threshold]


def derive_image_seed(run_seed: int, image_id: str) -> int:
    """Stable 64-bit per-image seed so dataset runs reproduce bit-exactly."""
    digest = hashlib.blake2b(
        f"{run_seed}:{image_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def all_fusion_orders(registry: ClassRegistry) -> Iterator[FusionOrder]:
    """All priority permutations of the registry's foreground classes."""
    for perm in itertools.permutations(registry.foreground_ids):
        yield FusionOrder(perm)


def _check_canvas(masks: Sequence[LabeledMask], width: int, height: int) -> None:
    for lm in masks:
        if lm.mask.width != width or lm.mask.height != height:
            raise ValidationError(
                f"mask #{lm.source_index} is {lm.mask.width}x{lm.mask.height}, "
                f"canvas is {width}x{height}"
            )


def _first_wins_fill(
    masks: Sequence[LabeledMask], width: int, height: int
) -> SemanticMap:
    labels = np.zeros((height, width), dtype=np.uint8)
    for lm in masks:
        kernels.paint_first_wins(labels, lm.mask.decode(), lm.category)
    return SemanticMap(labels)


def ordered_mask_fusion(
    masks: Sequence[LabeledMask],
    order: FusionOrder,
    width: int,
    height: int,
) -> SemanticMap:
    """Merge labeled masks into a semantic map by category priority.

    Each covered pixel ends up with the highest-priority category among the
    masks covering it; uncovered pixels stay background.  Ties within a
    category are broken by descending score then source index (provably
    irrelevant to the output, kept for determinism).
    """
    _check_canvas(masks, width, height)
    ranks = {category: i for i, category in enumerate(order.priority)}
    for lm in masks:
        if lm.category not in ranks:
            raise ValidationError(
                f"order {order.priority} does not cover category {lm.category}"
            )
    ordered = sorted(masks, key=lambda lm: (ranks[lm.category], -lm.score, lm.source_index))
    return _first_wins_fill(ordered, width, height)


def random_mask_fusion(
    masks: Sequence[LabeledMask],
    seed: int,
    width: int,
    height: int,
) -> SemanticMap:
    """Merge labeled masks in a seeded pseudorandom order (first wins)."""
    _check_canvas(masks, width, height)
    perm = np.random.default_rng(seed).permutation(len(masks))
    shuffled = [masks[i] for i in perm]
    return _first_wins_fill(shuffled, width, height)


def clip_mask_to_box(mask: BinaryMask, box: BoundingBox) -> BinaryMask:
    """Zero out mask pixels outside the box (opt-in; masks may bleed past prompts)."""
    box.validate_within(mask.width, mask.height)
    bits = mask.decode()
    clipped = np.zeros_like(bits)
    clipped[box.slices] = bits[box.slices]
    return mask_encode(clipped)


def fuse_pipeline(
    dets: Sequence[Detection],
    masks: Mapping[int, BinaryMask],
    cfg: FilterConfig,
    strategy: FusionStrategy,
    width: int,
    height: int,
    *,
    clip_to_box: bool = False,
) -> SemanticMap:
    """Filter detections, pair each survivor with its mask, fuse per strategy.

    ``masks`` is keyed by position in ``dets``; every surviving detection
    must have exactly one mask.
    """
    labeled: list[LabeledMask] = []
    for index, det in enumerate(dets):
        if det.score <= cfg.score_threshold:
            continue
        det.bbox.validate_within(width, height)
        mask = masks.get(index)
        if mask is None:
            raise ValidationError(
                f"no mask for surviving detection #{index} "
                f"(image {det.image_id!r}, score {det.score})"
            )
        if clip_to_box:
            mask = clip_mask_to_box(mask, det.bbox)
        labeled.append(
            LabeledMask(
                mask=mask, category=det.category, score=det.score, source_index=index
            )
        )

    if isinstance(strategy, OrderedFusion):
        return ordered_mask_fusion(labeled, strategy.order, width, height)
    if isinstance(strategy, RandomFusion):
        return random_mask_fusion(labeled, strategy.seed, width, height)
    raise ValidationError(f"unknown fusion strategy {strategy!r}")

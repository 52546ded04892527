"""Shared test fixtures and independent oracles.

The fusion oracle here deliberately uses a different algorithm than the
engine (per-pixel minimum priority over a coverage stack instead of a
sequential first-wins paint), so the two sides stay independent.
"""
from __future__ import annotations

import numpy as np
import pytest

from maskfuse.core import (
    BinaryMask,
    FusionOrder,
    LabeledMask,
    SemanticMap,
    m4d_registry,
    mask_encode,
)


@pytest.fixture
def registry():
    return m4d_registry()


def priority_oracle_fuse(
    masks: list[LabeledMask], order: FusionOrder, width: int, height: int
) -> SemanticMap:
    """Per-pixel reference: each covered pixel takes the covering category
    with the smallest priority index; uncovered pixels stay background."""
    n_ranks = len(order.priority)
    best_rank = np.full((height, width), n_ranks, dtype=np.int64)
    for lm in masks:
        covered = lm.mask.decode().astype(bool)
        rank = order.priority.index(lm.category)
        best_rank[covered] = np.minimum(best_rank[covered], rank)
    labels = np.zeros((height, width), dtype=np.uint8)
    for rank, category in enumerate(order.priority):
        labels[best_rank == rank] = category
    return SemanticMap(labels)


def random_labeled_masks(
    rng: np.random.Generator,
    width: int,
    height: int,
    n_masks: int,
    categories: tuple[int, ...],
) -> list[LabeledMask]:
    """Random rectangular blobs with random categories and scores."""
    masks = []
    for index in range(n_masks):
        bits = np.zeros((height, width), dtype=np.uint8)
        x0 = int(rng.integers(0, width))
        y0 = int(rng.integers(0, height))
        x1 = int(rng.integers(x0 + 1, width + 1))
        y1 = int(rng.integers(y0 + 1, height + 1))
        bits[y0:y1, x0:x1] = 1
        masks.append(
            LabeledMask(
                mask=mask_encode(bits),
                category=int(rng.choice(categories)),
                score=float(rng.random()),
                source_index=index,
            )
        )
    return masks


def mask_from_pixels(
    pixels: list[tuple[int, int]], width: int, height: int
) -> BinaryMask:
    bits = np.zeros((height, width), dtype=np.uint8)
    for row, col in pixels:
        bits[row, col] = 1
    return mask_encode(bits)

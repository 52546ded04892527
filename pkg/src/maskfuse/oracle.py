"""Synthetic stand-ins for the neural stages: scene generation, ground-truth
box extraction, an oracle segmenter with controllable noise, and detection
perturbation.  Everything is seeded; identical seeds give bit-identical data.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np
from scipy import ndimage

from .core import (
    BoundingBox,
    ClassRegistry,
    Detection,
    BinaryMask,
    SemanticMap,
    ValidationError,
    mask_encode,
)

# 8-connectivity for component labeling: diagonal contact joins blobs.
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)

_PLACEMENT_RETRIES = 64

ShapeKind = str  # "rect" | "ellipse"


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic ground-truth scene.

    ``shapes_per_class`` is either one count applied to every foreground
    class or a mapping keyed by class id.  ``size_scale`` (same shape of
    argument) stretches the sampled shape extents per class, which lets a
    study make one category systematically larger.  ``overlap_bias`` >= 0 is
    the probability that a new shape is centered on an already-painted
    foreground pixel instead of a uniform position.
    """

    width: int
    height: int
    shapes_per_class: Union[int, Mapping[int, int]] = 1
    shape_kinds: tuple[ShapeKind, ...] = ("rect", "ellipse")
    overlap_bias: float = 0.0
    size_scale: Union[float, Mapping[int, float]] = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 8 or self.height < 8:
            raise ValidationError("scene dimensions must be >= 8")
        if self.overlap_bias < 0:
            raise ValidationError("overlap_bias must be >= 0")
        if not self.shape_kinds or any(
            k not in ("rect", "ellipse") for k in self.shape_kinds
        ):
            raise ValidationError(f"unsupported shape kinds {self.shape_kinds}")

    def count_for(self, class_id: int) -> int:
        if isinstance(self.shapes_per_class, Mapping):
            count = int(self.shapes_per_class.get(class_id, 0))
        else:
            count = int(self.shapes_per_class)
        if count < 0:
            raise ValidationError(f"negative shape count for class {class_id}")
        return count

    def scale_for(self, class_id: int) -> float:
        if isinstance(self.size_scale, Mapping):
            return float(self.size_scale.get(class_id, 1.0))
        return float(self.size_scale)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise knobs for the oracle segmenter and detection perturbation.

    ``morph_radius`` < 0 erodes, > 0 dilates (square structuring element).
    The defaults are all zero: a NoiseSpec() is the exact oracle.
    """

    morph_radius: int = 0
    boundary_flip_prob: float = 0.0
    box_jitter_sigma: float = 0.0
    score_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.boundary_flip_prob <= 1.0:
            raise ValidationError("boundary_flip_prob outside [0, 1]")
        if self.box_jitter_sigma < 0 or self.score_noise_sigma < 0:
            raise ValidationError("noise sigmas must be >= 0")


def _derived_seed(*parts: object) -> int:
    """Stable 64-bit sub-seed from heterogeneous identifying parts."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _paint_shape(
    canvas: np.ndarray,
    rng: np.random.Generator,
    class_id: int,
    kind: ShapeKind,
    overlap_bias: float,
    scale: float,
) -> None:
    h, w = canvas.shape
    base = min(w, h)
    top = max(2, int(round(base / 4 * scale)))
    ax = int(rng.integers(1, top + 1))
    ay = int(rng.integers(1, top + 1))

    foreground = np.flatnonzero(canvas)
    if foreground.size and rng.random() < min(1.0, overlap_bias):
        pick = int(foreground[rng.integers(0, foreground.size)])
        cy, cx = divmod(pick, w)
    else:
        cx = int(rng.integers(0, w))
        cy = int(rng.integers(0, h))

    if kind == "rect":
        x0, x1 = max(0, cx - ax), min(w, cx + ax + 1)
        y0, y1 = max(0, cy - ay), min(h, cy + ay + 1)
        canvas[y0:y1, x0:x1] = class_id
    else:
        yy, xx = np.ogrid[:h, :w]
        inside = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
        canvas[inside] = class_id


def generate_scene(spec: SceneSpec, registry: ClassRegistry) -> SemanticMap:
    """Paint seeded random shapes per class onto a background canvas.

    Classes are painted in ascending id order, shapes in draw order; later
    paint overwrites earlier, so the map is single-valued by construction.
    Placement is retried until every requested class keeps at least one
    pixel, or fails with an error once the canvas is too crowded.
    """
    rng = np.random.default_rng(spec.seed)
    requested = [c for c in registry.foreground_ids if spec.count_for(c) > 0]
    for _ in range(_PLACEMENT_RETRIES):
        canvas = np.zeros((spec.height, spec.width), dtype=np.uint8)
        for class_id in registry.foreground_ids:
            for _shape in range(spec.count_for(class_id)):
                kind = spec.shape_kinds[rng.integers(0, len(spec.shape_kinds))]
                _paint_shape(
                    canvas,
                    rng,
                    class_id,
                    kind,
                    spec.overlap_bias,
                    spec.scale_for(class_id),
                )
        present = set(np.unique(canvas).tolist())
        if all(c in present for c in requested):
            return SemanticMap(canvas)
    raise ValidationError(
        f"canvas {spec.width}x{spec.height} too small to keep all requested "
        f"classes visible after {_PLACEMENT_RETRIES} attempts"
    )


def extract_gt_boxes(
    gt: SemanticMap,
    registry: ClassRegistry,
    min_area: int = 1,
    image_id: str = "",
) -> list[Detection]:
    """Tight boxes of 8-connected components per foreground class, score 1.0.

    Components smaller than ``min_area`` pixels are dropped.  Output is
    sorted by (class id, y0, x0).
    """
    gt.validate_for(registry)
    detections: list[Detection] = []
    for class_id in registry.foreground_ids:
        binary = gt.labels == class_id
        if not binary.any():
            continue
        labeled, n_components = ndimage.label(binary, structure=_STRUCTURE_8)
        component_sizes = np.bincount(labeled.ravel(), minlength=n_components + 1)
        for component, slices in enumerate(ndimage.find_objects(labeled), start=1):
            if slices is None or component_sizes[component] < min_area:
                continue
            row_slice, col_slice = slices
            detections.append(
                Detection(
                    image_id=image_id,
                    category=class_id,
                    bbox=BoundingBox(
                        x0=int(col_slice.start),
                        y0=int(row_slice.start),
                        x1=int(col_slice.stop),
                        y1=int(row_slice.stop),
                    ),
                    score=1.0,
                )
            )
    detections.sort(key=lambda d: (d.category, d.bbox.y0, d.bbox.x0))
    return detections


def _square(radius: int) -> np.ndarray:
    side = 2 * radius + 1
    return np.ones((side, side), dtype=bool)


def oracle_segment(gt: SemanticMap, det: Detection, noise: NoiseSpec) -> BinaryMask:
    """Segment ``det.category`` inside ``det.bbox`` straight from ground truth.

    With zero noise this is exact.  Otherwise the base mask is dilated or
    eroded by ``|morph_radius|`` and boundary pixels are flipped
    independently with ``boundary_flip_prob`` (seeded per detection).
    """
    det.bbox.validate_within(gt.width, gt.height)
    mask = np.zeros((gt.height, gt.width), dtype=bool)
    region = det.bbox.slices
    mask[region] = gt.labels[region] == det.category

    if noise.morph_radius > 0:
        mask = ndimage.binary_dilation(mask, structure=_square(noise.morph_radius))
    elif noise.morph_radius < 0:
        mask = ndimage.binary_erosion(mask, structure=_square(-noise.morph_radius))

    if noise.boundary_flip_prob > 0.0:
        rng = np.random.default_rng(
            _derived_seed(noise.seed, det.image_id, det.category, *det.bbox.as_tuple())
        )
        # Boundary = 3x3 morphological gradient: pixels whose neighborhood
        # is not uniform.  Draw over the full grid so the stream is stable.
        boundary = ndimage.binary_dilation(mask, _STRUCTURE_8) & ~ndimage.binary_erosion(
            mask, _STRUCTURE_8
        )
        flips = boundary & (rng.random(mask.shape) < noise.boundary_flip_prob)
        mask = mask ^ flips

    return mask_encode(mask)


def perturb_detections(
    dets: Sequence[Detection],
    noise: NoiseSpec,
    width: int,
    height: int,
) -> list[Detection]:
    """Jitter box edges and scores with seeded Gaussian noise.

    Boxes stay within the canvas and non-empty; scores stay in [0, 1].
    Zero sigmas return the input detections unchanged.
    """
    if noise.box_jitter_sigma == 0.0 and noise.score_noise_sigma == 0.0:
        return list(dets)

    perturbed: list[Detection] = []
    for index, det in enumerate(dets):
        rng = np.random.default_rng(_derived_seed(noise.seed, det.image_id, index))
        box = det.bbox
        if noise.box_jitter_sigma > 0.0:
            dx0, dy0, dx1, dy1 = rng.normal(0.0, noise.box_jitter_sigma, size=4)
            x0 = int(np.clip(round(box.x0 + dx0), 0, width - 1))
            y0 = int(np.clip(round(box.y0 + dy0), 0, height - 1))
            x1 = int(np.clip(round(box.x1 + dx1), 1, width))
            y1 = int(np.clip(round(box.y1 + dy1), 1, height))
            if x1 <= x0:
                x1 = x0 + 1
            if y1 <= y0:
                y1 = y0 + 1
            box = BoundingBox(x0=x0, y0=y0, x1=x1, y1=y1)
        score = det.score
        if noise.score_noise_sigma > 0.0:
            score = float(
                np.clip(score + rng.normal(0.0, noise.score_noise_sigma), 0.0, 1.0)
            )
        perturbed.append(
            Detection(image_id=det.image_id, category=det.category, bbox=box, score=score)
        )
    return perturbed

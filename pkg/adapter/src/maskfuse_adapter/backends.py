"""Model backends: the builtin no-ML stubs plus a dotted-path loader for
real detectors and box-prompted segmenters.

A detector takes (image_path, (width, height)) and returns RawDetections in
the detector's own label vocabulary.  A segmenter takes (image_path,
(width, height), box) and returns a HxW bool mask for that one prompt.
"""
from __future__ import annotations

import importlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import AdapterError, ModelSpec

Box = tuple[int, int, int, int]  # half-open x0, y0, x1, y1


@dataclass(frozen=True)
class RawDetection:
    label: str
    box: Box
    score: float


DetectorFn = Callable[[Path, tuple[int, int]], Sequence[RawDetection]]
SegmenterFn = Callable[[Path, tuple[int, int], Box], np.ndarray]


def _clamp_box(box: Box, width: int, height: int) -> Box | None:
    x0, y0, x1, y1 = box
    x0, y0 = max(0, int(x0)), max(0, int(y0))
    x1, y1 = min(width, int(x1)), min(height, int(y1))
    if x0 >= x1 or y0 >= y1:
        return None
    return (x0, y0, x1, y1)


def stub_detector(spec: ModelSpec) -> DetectorFn:
    """Deterministic detector stand-in.

    options.detections: {image_id: [{"label", "box", "score"}, ...]} replays
    fixed boxes per image.  Without it, one inset box per options.labels
    entry is emitted, spread across the image, scores descending from 0.9.
    """
    fixed = spec.options.get("detections")
    labels = list(spec.options.get("labels", []))

    def detect(image_path: Path, size: tuple[int, int]) -> list[RawDetection]:
        width, height = size
        if fixed is not None:
            out = []
            for entry in fixed.get(image_path.stem, []):
                box = _clamp_box(tuple(entry["box"]), width, height)
                if box is None:
                    raise AdapterError(
                        f"{image_path.stem}: stub box {entry['box']} is empty "
                        f"after clamping to {width}x{height}"
                    )
                out.append(RawDetection(entry["label"], box, float(entry["score"])))
            return out
        out = []
        n = max(1, len(labels))
        for i, label in enumerate(labels):
            x0 = (i * width) // n + max(1, width // (4 * n))
            x1 = ((i + 1) * width) // n - max(1, width // (4 * n))
            y0, y1 = height // 4, max(height // 4 + 1, (3 * height) // 4)
            box = _clamp_box((x0, y0, max(x0 + 1, x1), y1), width, height)
            if box is not None:
                out.append(RawDetection(label, box, round(0.9 - 0.1 * i, 6)))
        return out

    return detect


def stub_segmenter(spec: ModelSpec) -> SegmenterFn:
    """Returns the prompt-box interior, optionally inset by options.inset."""
    inset = int(spec.options.get("inset", 0))

    def segment(image_path: Path, size: tuple[int, int], box: Box) -> np.ndarray:
        width, height = size
        x0, y0, x1, y1 = box
        mask = np.zeros((height, width), dtype=bool)
        mask[
            min(y0 + inset, y1 - 1) : max(y1 - inset, y0 + 1),
            min(x0 + inset, x1 - 1) : max(x1 - inset, x0 + 1),
        ] = True
        return mask

    return segment


def _load_factory(spec: ModelSpec):
    module_name, sep, attr = spec.model.partition(":")
    if not sep:
        raise AdapterError(
            f"unknown model {spec.model!r}: use 'stub' or 'package.module:factory'"
        )
    try:
        module = importlib.import_module(module_name)
    except ImportError as exc:
        raise AdapterError(f"cannot import backend {module_name!r}: {exc}") from None
    try:
        factory = getattr(module, attr)
    except AttributeError:
        raise AdapterError(f"{module_name!r} has no attribute {attr!r}") from None
    return factory(spec)


def load_detector(spec: ModelSpec) -> DetectorFn:
    if spec.model == "stub":
        return stub_detector(spec)
    return _load_factory(spec)


def load_segmenter(spec: ModelSpec) -> SegmenterFn:
    if spec.model == "stub":
        return stub_segmenter(spec)
    return _load_factory(spec)

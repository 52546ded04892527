"""Shared domain types: registries, boxes, detections, masks, semantic maps.

All types are immutable values after construction and safe to share across
workers.  Pixel grids are row-major; boxes are half-open pixel intervals
[x0, x1) x [y0, y1); class id 0 is always the background.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels

BACKGROUND_ID = 0


class ValidationError(ValueError):
    """A domain value violates its invariants."""


@dataclass(frozen=True)
class ClassRegistry:
    """Ordered class-id/name table; index in ``names`` is the class id."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.names:
            raise ValidationError("registry needs at least the background class")
        if len(set(self.names)) != len(self.names):
            raise ValidationError(f"duplicate class names in {self.names}")
        if any(not n for n in self.names):
            raise ValidationError("class names must be non-empty")

    @property
    def background_id(self) -> int:
        return BACKGROUND_ID

    @property
    def n_classes(self) -> int:
        return len(self.names)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(range(len(self.names)))

    @property
    def foreground_ids(self) -> tuple[int, ...]:
        return tuple(range(1, len(self.names)))

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise ValidationError(f"class id {class_id} outside registry")
        return self.names[class_id]

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown class name {name!r}") from None

    def is_foreground(self, class_id: int) -> bool:
        return 0 < class_id < len(self.names)


def make_registry(names: Sequence[str], background_name: str) -> ClassRegistry:
    """Build a registry with ``background_name`` at id 0, the rest at 1..n.

    Non-background names keep their given relative order.
    """
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate class names in {list(names)}")
    if background_name not in names:
        raise ValidationError(f"background {background_name!r} not among class names")
    ordered = [background_name] + [n for n in names if n != background_name]
    return ClassRegistry(tuple(ordered))


# Default registry for the SAR oil-spill setting.
M4D_CLASS_NAMES = ("sea_surface", "oil_spill", "look_alike", "ship", "land")


def m4d_registry() -> ClassRegistry:
    return ClassRegistry(M4D_CLASS_NAMES)


@dataclass(frozen=True)
class ImageRef:
    """Identity and pixel dimensions of one image; content is never needed."""

    image_id: str
    width: int
    height: int

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValidationError("image_id must be non-empty")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"image {self.image_id!r}: dimensions must be >= 1")


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if self.x0 < 0 or self.y0 < 0 or self.x0 >= self.x1 or self.y0 >= self.y1:
            raise ValidationError(f"degenerate box {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def slices(self) -> tuple[slice, slice]:
        """(row, col) slices for indexing a (height, width) grid."""
        return (slice(self.y0, self.y1), slice(self.x0, self.x1))

    def validate_within(self, width: int, height: int) -> None:
        if self.x1 > width or self.y1 > height:
            raise ValidationError(
                f"box {self.as_tuple()} exceeds canvas {width}x{height}"
            )


@dataclass(frozen=True)
class Detection:
    """One detected object: foreground category, box, classification score."""

    image_id: str
    category: int
    bbox: BoundingBox
    score: float

    def __post_init__(self) -> None:
        if self.category == BACKGROUND_ID:
            raise ValidationError("detections cannot carry the background class")
        if self.category < 0:
            raise ValidationError(f"invalid category {self.category}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class BinaryMask:
    """Run-length-encoded foreground mask on a width x height grid.

    ``runs`` alternate background/foreground counts in row-major scan order,
    starting with background; the leading run may be 0, all others are >= 1
    (canonical form, unique per bitmap).
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValidationError("mask dimensions must be >= 1")
        if not self.runs:
            raise ValidationError("runs must be non-empty")
        if self.runs[0] < 0 or any(r < 1 for r in self.runs[1:]):
            raise ValidationError(f"non-canonical runs {self.runs}")
        total = sum(self.runs)
        if total != self.width * self.height:
            raise ValidationError(
                f"runs sum {total} != {self.width}x{self.height}"
            )

    @property
    def area(self) -> int:
        """Foreground pixel count."""
        return sum(self.runs[1::2])

    @property
    def is_empty(self) -> bool:
        return self.area == 0

    def decode(self) -> np.ndarray:
        """Expand to a (height, width) uint8 grid of 0/1."""
        flat = kernels.rle_decode(
            np.asarray(self.runs, dtype=np.int64), self.width * self.height
        )
        return flat.reshape(self.height, self.width)


def mask_encode(bits: np.ndarray) -> BinaryMask:
    """Encode a 2D grid (any dtype, nonzero = foreground) into canonical RLE."""
    arr = np.asarray(bits)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2D grid, got shape {arr.shape}")
    h, w = arr.shape
    if h < 1 or w < 1:
        raise ValidationError("mask dimensions must be >= 1")
    flat = np.ascontiguousarray(arr != 0, dtype=np.uint8).ravel()
    runs = kernels.rle_encode(flat)
    return BinaryMask(width=w, height=h, runs=tuple(int(r) for r in runs))


def mask_decode(mask: BinaryMask) -> np.ndarray:
    """Operation form of :meth:`BinaryMask.decode`."""
    return mask.decode()


@dataclass(frozen=True)
class LabeledMask:
    """A binary mask paired with its category, score, and input position."""

    mask: BinaryMask
    category: int
    score: float
    source_index: int = 0

    def __post_init__(self) -> None:
        if self.category == BACKGROUND_ID or self.category < 0:
            raise ValidationError(f"invalid foreground category {self.category}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")
        if self.source_index < 0:
            raise ValidationError("source_index must be >= 0")


@dataclass(frozen=True, eq=False)
class SemanticMap:
    """Dense per-pixel class-id grid; 0 is background."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"labels must be a non-empty 2D grid, got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @classmethod
    def background(cls, width: int, height: int) -> "SemanticMap":
        return cls(np.zeros((height, width), dtype=np.uint8))

    def validate_for(self, registry: ClassRegistry) -> None:
        top = int(self.labels.max())
        if top >= registry.n_classes:
            raise ValidationError(
                f"label {top} outside registry of {registry.n_classes} classes"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SemanticMap):
            return NotImplemented
        return self.labels.shape == other.labels.shape and bool(
            np.array_equal(self.labels, other.labels)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class FusionOrder:
    """Priority permutation over foreground class ids, highest first."""

    priority: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.priority:
            raise ValidationError("fusion order must not be empty")
        if any(c <= BACKGROUND_ID for c in self.priority):
            raise ValidationError(f"order {self.priority} contains non-foreground ids")
        if len(set(self.priority)) != len(self.priority):
            raise ValidationError(f"order {self.priority} has duplicates")

    @classmethod
    def from_ids(cls, registry: ClassRegistry, ids: Iterable[int]) -> "FusionOrder":
        order = cls(tuple(int(i) for i in ids))
        order.validate_for(registry)
        return order

    @classmethod
    def from_names(cls, registry: ClassRegistry, names: Iterable[str]) -> "FusionOrder":
        return cls.from_ids(registry, (registry.id_of(n) for n in names))

    def validate_for(self, registry: ClassRegistry) -> None:
        if sorted(self.priority) != list(registry.foreground_ids):
            raise ValidationError(
                f"order {self.priority} is not a permutation of the "
                f"foreground ids {registry.foreground_ids}"
            )

    def rank(self, category: int) -> int:
        """Position of ``category`` in the priority list (0 = highest)."""
        try:
            return self.priority.index(category)
        except ValueError:
            raise ValidationError(f"category {category} not covered by {self.priority}") from None

    def names(self, registry: ClassRegistry) -> tuple[str, ...]:
        return tuple(registry.name_of(c) for c in self.priority)

"""Bit-exact serialization for detections, masks, semantic maps, and reports.

Formats:
  detections    JSON Lines, one object per detection:
                {"image_id": str, "category": name-or-id,
                 "bbox": [x0, y0, x1, y1], "score": float}
  binary masks  8-bit single-channel image (0 background, 255 foreground),
                or RLE JSON {"size": [h, w], "runs": [...]} (canonical form)
  semantic maps 8-bit single-channel image holding class ids directly
  reports       CSV (row_label, one column per class IoU, mIoU, mF1;
                percentages, 2 decimals) or JSON mirroring MetricsReport
  manifest      single JSON document with relative path templates

All writers are atomic (write-temp-then-rename); readers raise CodecError
with file/line context on malformed input, never crash.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import (
    BinaryMask,
    BoundingBox,
    ClassRegistry,
    Detection,
    ImageRef,
    SemanticMap,
    ValidationError,
    mask_encode,
)
from .metrics import MetricsReport


class CodecError(ValueError):
    """Malformed or unreadable serialized data."""


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# --------------------------------------------------------------------------
# Detections (JSON Lines)


def write_detections(
    dets: Sequence[Detection], path: Union[str, Path], registry: ClassRegistry
) -> None:
    lines = []
    for det in dets:
        lines.append(
            json.dumps(
                {
                    "image_id": det.image_id,
                    "category": registry.name_of(det.category),
                    "bbox": list(det.bbox.as_tuple()),
                    "score": det.score,
                },
                sort_keys=True,
            )
        )
    atomic_write_text(Path(path), "".join(line + "\n" for line in lines))


def _parse_detection(obj: object, registry: ClassRegistry) -> Detection:
    if not isinstance(obj, dict):
        raise CodecError(f"expected an object, got {type(obj).__name__}")
    try:
        image_id = obj["image_id"]
        category = obj["category"]
        bbox = obj["bbox"]
        score = obj["score"]
    except KeyError as missing:
        raise CodecError(f"missing field {missing}") from None
    if not isinstance(image_id, str):
        raise CodecError("image_id must be a string")
    if isinstance(category, str):
        class_id = registry.id_of(category)
    elif isinstance(category, int) and not isinstance(category, bool):
        if category not in registry.class_ids:
            raise CodecError(f"unknown class id {category}")
        class_id = category
    else:
        raise CodecError(f"category must be a name or id, got {category!r}")
    if (
        not isinstance(bbox, list)
        or len(bbox) != 4
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in bbox)
    ):
        raise CodecError(f"bbox must be [x0, y0, x1, y1] integers, got {bbox!r}")
    if not isinstance(score, (int, float)) or isinstance(score, bool):
        raise CodecError(f"score must be a number, got {score!r}")
    try:
        return Detection(
            image_id=image_id,
            category=class_id,
            bbox=BoundingBox(x0=bbox[0], y0=bbox[1], x1=bbox[2], y1=bbox[3]),
            score=float(score),
        )
    except ValidationError as exc:
        raise CodecError(str(exc)) from None


def read_detections(path: Union[str, Path], registry: ClassRegistry) -> list[Detection]:
    path = Path(path)
    detections = []
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CodecError(f"{path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CodecError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        try:
            detections.append(_parse_detection(obj, registry))
        except (CodecError, ValidationError) as exc:
            raise CodecError(f"{path}:{lineno}: {exc}") from None
    return detections


def read_detections_coco(
    path: Union[str, Path], registry: ClassRegistry
) -> list[Detection]:
    """Convenience importer for COCO-style results (not the canonical format).

    Accepts a single JSON array of ``{"image_id", "category_id",
    "bbox": [x, y, w, h], "score"}`` objects; boxes are converted from
    xywh to half-open xyxy with rounding.  Canonical storage stays JSONL.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise CodecError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CodecError(f"{path}: invalid JSON ({exc.msg})") from None
    if isinstance(obj, dict) and "annotations" in obj:
        obj = obj["annotations"]
    if not isinstance(obj, list):
        raise CodecError(f"{path}: expected a results array")
    detections = []
    for i, entry in enumerate(obj):
        if not isinstance(entry, dict):
            raise CodecError(f"{path}: entry {i} is not an object")
        try:
            image_id = entry["image_id"]
            category_id = entry["category_id"]
            x, y, w, h = entry["bbox"]
            score = entry["score"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CodecError(f"{path}: entry {i} malformed ({exc})") from None
        if category_id not in registry.class_ids:
            raise CodecError(f"{path}: entry {i}: unknown class id {category_id}")
        try:
            detections.append(
                Detection(
                    image_id=str(image_id),
                    category=int(category_id),
                    bbox=BoundingBox(
                        x0=round(x), y0=round(y), x1=round(x + w), y1=round(y + h)
                    ),
                    score=float(score),
                )
            )
        except (ValidationError, TypeError) as exc:
            raise CodecError(f"{path}: entry {i}: {exc}") from None
    return detections


# --------------------------------------------------------------------------
# Binary masks (image or RLE JSON, chosen by extension)


def _read_gray_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise CodecError(
                    f"{path}: expected 8-bit single-channel image, got mode {img.mode!r}"
                )
            return np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise CodecError(f"{path}: unreadable image ({exc})") from None


def _write_gray_image(arr: np.ndarray, path: Path) -> None:
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def write_mask(mask: BinaryMask, path: Union[str, Path]) -> None:
    path = Path(path)
    if path.suffix == ".json":
        payload = {"size": [mask.height, mask.width], "runs": list(mask.runs)}
        atomic_write_text(path, json.dumps(payload, sort_keys=True) + "\n")
    else:
        _write_gray_image(mask.decode() * np.uint8(255), path)


def read_mask(path: Union[str, Path]) -> BinaryMask:
    path = Path(path)
    if path.suffix == ".json":
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError) as exc:
            raise CodecError(f"{path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CodecError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or "size" not in obj or "runs" not in obj:
            raise CodecError(f"{path}: RLE object needs 'size' and 'runs'")
        size, runs = obj["size"], obj["runs"]
        if (
            not isinstance(size, list)
            or len(size) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in size)
        ):
            raise CodecError(f"{path}: size must be [height, width]")
        if not isinstance(runs, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in runs
        ):
            raise CodecError(f"{path}: runs must be a list of integers")
        try:
            return BinaryMask(width=size[1], height=size[0], runs=tuple(runs))
        except ValidationError as exc:
            raise CodecError(f"{path}: {exc}") from None

    arr = _read_gray_image(path)
    bad = np.setdiff1d(np.unique(arr), [0, 255])
    if bad.size:
        raise CodecError(
            f"{path}: binary mask values must be 0 or 255, found {bad.tolist()}"
        )
    return mask_encode(arr)


# --------------------------------------------------------------------------
# Semantic maps


def write_semantic(smap: SemanticMap, path: Union[str, Path]) -> None:
    _write_gray_image(smap.labels, Path(path))


def read_semantic(
    path: Union[str, Path], registry: ClassRegistry | None = None
) -> SemanticMap:
    arr = _read_gray_image(Path(path))
    smap = SemanticMap(arr)
    if registry is not None:
        try:
            smap.validate_for(registry)
        except ValidationError as exc:
            raise CodecError(f"{path}: {exc}") from None
    return smap


Palette = Mapping[int, tuple[int, int, int]]


def load_palette(path: Union[str, Path]) -> dict[int, tuple[int, int, int]]:
    """Palette config: JSON object mapping class id (as string) to [r, g, b]."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise CodecError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CodecError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise CodecError(f"{path}: palette must be an object")
    palette: dict[int, tuple[int, int, int]] = {}
    for key, value in obj.items():
        try:
            class_id = int(key)
        except ValueError:
            raise CodecError(f"{path}: palette key {key!r} is not a class id") from None
        if (
            not isinstance(value, list)
            or len(value) != 3
            or not all(isinstance(v, int) and 0 <= v <= 255 for v in value)
        ):
            raise CodecError(f"{path}: palette entry {key!r} must be [r, g, b]")
        palette[class_id] = (value[0], value[1], value[2])
    return palette


def write_semantic_color(
    smap: SemanticMap, palette: Palette, path: Union[str, Path]
) -> None:
    """Colorized export for qualitative inspection; ids not in the palette stay black."""
    lut = np.zeros((256, 3), dtype=np.uint8)
    for class_id, rgb in palette.items():
        lut[class_id] = rgb
    rgb_arr = lut[smap.labels]
    buf = io.BytesIO()
    Image.fromarray(rgb_arr, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(Path(path), buf.getvalue())


# --------------------------------------------------------------------------
# Metric reports (single report or sweep table)

ReportRows = Sequence[tuple[str, MetricsReport]]


def _as_rows(report: Union[MetricsReport, ReportRows]) -> ReportRows:
    if isinstance(report, MetricsReport):
        return [("all", report)]
    return list(report)


def _pct(value: float | None) -> str:
    return "" if value is None else f"{value * 100:.2f}"


def _report_json_obj(
    rows: ReportRows,
    extras: Sequence[Mapping[str, object]] | None,
    metadata: Mapping[str, object] | None,
) -> dict:
    out_rows = []
    for i, (label, rep) in enumerate(rows):
        row: dict[str, object] = {
            "label": label,
            "per_class_iou": {
                rep.class_names[c]: v for c, v in rep.per_class_iou.items()
            },
            "per_class_f1": {
                rep.class_names[c]: v for c, v in rep.per_class_f1.items()
            },
            "miou": rep.miou,
            "mf1": rep.mf1,
            "evaluated_classes": list(rep.evaluated_classes),
            "excluded_classes": list(rep.excluded_classes),
        }
        if extras is not None:
            row.update(extras[i])
        out_rows.append(row)
    class_names = list(rows[0][1].class_names) if rows else []
    obj: dict = {"class_names": class_names, "rows": out_rows}
    if metadata is not None:
        obj["metadata"] = dict(metadata)
    return obj


def write_report(
    report: Union[MetricsReport, ReportRows],
    path: Union[str, Path],
    format: str = "csv",
    extras: Sequence[Mapping[str, object]] | None = None,
    metadata: Mapping[str, object] | None = None,
) -> None:
    """Write one report or a sweep table.

    ``extras`` (parallel to the rows) appends extra columns after mF1 in the
    CSV and extra keys to each JSON row — sweeps use it for survivor counts,
    sigmas, and equivalence-class flags.  ``metadata`` lands at the top level
    of the JSON document (skipped-image notes, for instance); CSV ignores it.
    """
    rows = _as_rows(report)
    if extras is not None and len(extras) != len(rows):
        raise CodecError("extras must parallel the report rows")
    path = Path(path)
    if format == "json":
        obj = _report_json_obj(rows, extras, metadata)
        atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
        return
    if format != "csv":
        raise CodecError(f"unknown report format {format!r}")

    extra_cols: list[str] = []
    if extras:
        seen = set()
        for mapping in extras:
            for key in mapping:
                if key not in seen:
                    seen.add(key)
                    extra_cols.append(key)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    class_names = rows[0][1].class_names if rows else ()
    writer.writerow(["row_label", *class_names, "mIoU", "mF1", *extra_cols])
    for i, (label, rep) in enumerate(rows):
        cells = [label]
        cells += [_pct(rep.per_class_iou[c]) for c in range(len(class_names))]
        cells += [_pct(rep.miou), _pct(rep.mf1)]
        if extras:
            cells += [str(extras[i].get(k, "")) for k in extra_cols]
        writer.writerow(cells)
    atomic_write_text(path, buf.getvalue())


def read_report(path: Union[str, Path]) -> dict:
    """Parse a JSON report; writing the result back is byte-identical."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise CodecError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CodecError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict) or "rows" not in obj:
        raise CodecError(f"{path}: not a report document")
    return obj


# --------------------------------------------------------------------------
# Dataset manifest


@dataclass(frozen=True)
class PathTemplates:
    """Relative file locations; templates use {image_id} and {index}."""

    detections: str = "detections.jsonl"
    masks: str = "masks/{image_id}__{index}.png"
    gt_maps: str | None = "gt/{image_id}.png"

    def __post_init__(self) -> None:
        if "{image_id}" not in self.masks or "{index}" not in self.masks:
            raise ValidationError("masks template needs {image_id} and {index}")
        if self.gt_maps is not None and "{image_id}" not in self.gt_maps:
            raise ValidationError("gt_maps template needs {image_id}")


@dataclass(frozen=True)
class DatasetManifest:
    """Inventory of one dataset: registry, images, and where files live."""

    registry: ClassRegistry
    images: tuple[ImageRef, ...]
    paths: PathTemplates
    root: Path

    def __post_init__(self) -> None:
        ids = [img.image_id for img in self.images]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate image ids in manifest")

    def detections_path(self) -> Path:
        return self.root / self.paths.detections

    def mask_path(self, image_id: str, index: int) -> Path:
        return self.root / self.paths.masks.format(image_id=image_id, index=index)

    def gt_map_path(self, image_id: str) -> Path:
        if self.paths.gt_maps is None:
            raise ValidationError("manifest declares no ground-truth maps")
        return self.root / self.paths.gt_maps.format(image_id=image_id)

    @property
    def has_gt(self) -> bool:
        return self.paths.gt_maps is not None


def save_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> None:
    obj = {
        "version": 1,
        "registry": {
            "names": list(manifest.registry.names),
            "background": manifest.registry.names[0],
        },
        "images": [
            {"id": img.image_id, "width": img.width, "height": img.height}
            for img in manifest.images
        ],
        "paths": {
            "detections": manifest.paths.detections,
            "masks": manifest.paths.masks,
            "gt_maps": manifest.paths.gt_maps,
        },
    }
    atomic_write_text(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise CodecError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CodecError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise CodecError(f"{path}: manifest must be a JSON object")
    try:
        reg = obj["registry"]
        names = reg["names"]
        background = reg.get("background", names[0] if names else None)
        images = obj["images"]
        paths = obj.get("paths", {})
    except (KeyError, TypeError, IndexError) as exc:
        raise CodecError(f"{path}: malformed manifest ({exc})") from None
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise CodecError(f"{path}: registry names must be strings")
    if not names or names[0] != background:
        raise CodecError(f"{path}: background {background!r} must be the first class")
    try:
        registry = ClassRegistry(tuple(names))
        refs = tuple(
            ImageRef(image_id=img["id"], width=img["width"], height=img["height"])
            for img in images
        )
        templates = PathTemplates(
            detections=paths.get("detections", "detections.jsonl"),
            masks=paths.get("masks", "masks/{image_id}__{index}.png"),
            gt_maps=paths.get("gt_maps"),
        )
        return DatasetManifest(
            registry=registry, images=refs, paths=templates, root=path.parent
        )
    except (ValidationError, KeyError, TypeError) as exc:
        raise CodecError(f"{path}: malformed manifest ({exc})") from None

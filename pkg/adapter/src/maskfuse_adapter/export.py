"""Run the detector and segmenter over an image folder and emit the engine's
wire formats: detections JSONL, one 0/255 PNG mask per detection named
``<image_id>__<index>.png``, and a dataset manifest.

The adapter never filters or fuses; score thresholding and mask merging are
the engine's job.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backends import load_detector, load_segmenter
from .config import AdapterConfig, AdapterError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")

DETECTIONS_FILE = "detections.jsonl"
MASKS_TEMPLATE = "masks/{image_id}__{index}.png"
MANIFEST_FILE = "manifest.json"


def _atomic_write(path: Path, payload: bytes) -> None:
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


def list_images(image_dir: Path) -> list[Path]:
    if not image_dir.is_dir():
        raise AdapterError(f"image folder {image_dir} does not exist")
    images = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    stems = [p.stem for p in images]
    if len(set(stems)) != len(stems):
        raise AdapterError(f"duplicate image ids (stems) in {image_dir}")
    return images


def _image_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as img:
            return img.size  # (width, height)
    except OSError as exc:
        raise AdapterError(f"{path}: unreadable image ({exc})") from None


@dataclass
class ExportResult:
    manifest_path: Path
    detections_path: Path
    n_images: int
    n_detections: int
    n_masks: int
    failures: list[tuple[str, str]]  # (image_id, error)


def export_detections(cfg: AdapterConfig) -> ExportResult:
    """Detector pass: detections JSONL plus the dataset manifest.

    Scores are written as the detector produced them; labels outside the
    mapping fail fast unless ``drop_unmapped`` is set.
    """
    detect = load_detector(cfg.detector)
    images = list_images(cfg.image_dir)

    manifest_images = []
    lines: list[str] = []
    n_detections = 0
    for path in images:
        image_id = path.stem
        width, height = _image_size(path)
        manifest_images.append({"id": image_id, "width": width, "height": height})
        for raw in detect(path, (width, height)):
            target = cfg.label_map.get(raw.label)
            if target is None:
                if cfg.drop_unmapped:
                    continue
                raise AdapterError(
                    f"{image_id}: detector label {raw.label!r} has no registry "
                    "mapping (set drop_unmapped to ignore it)"
                )
            x0, y0, x1, y1 = raw.box
            if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
                raise AdapterError(
                    f"{image_id}: detector box {raw.box} outside {width}x{height}"
                )
            if not 0.0 <= raw.score <= 1.0:
                raise AdapterError(f"{image_id}: score {raw.score} outside [0, 1]")
            lines.append(
                json.dumps(
                    {
                        "image_id": image_id,
                        "category": target,
                        "bbox": [x0, y0, x1, y1],
                        "score": raw.score,
                    },
                    sort_keys=True,
                )
            )
            n_detections += 1

    detections_path = cfg.out_dir / DETECTIONS_FILE
    _atomic_write(detections_path, "".join(l + "\n" for l in lines).encode())

    manifest = {
        "version": 1,
        "registry": {"names": list(cfg.classes), "background": cfg.classes[0]},
        "images": manifest_images,
        "paths": {
            "detections": DETECTIONS_FILE,
            "masks": MASKS_TEMPLATE,
            "gt_maps": None,
        },
    }
    manifest_path = cfg.out_dir / MANIFEST_FILE
    _atomic_write(
        manifest_path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
    )
    return ExportResult(
        manifest_path=manifest_path,
        detections_path=detections_path,
        n_images=len(images),
        n_detections=n_detections,
        n_masks=0,
        failures=[],
    )


def export_masks(cfg: AdapterConfig, result: ExportResult) -> ExportResult:
    """Segmenter pass: one mask file per exported detection.

    A segmenter failure is recorded per image and the run continues; the
    affected image keeps its detections but will fail later at fuse time,
    which is the engine's partial-failure path.
    """
    segment = load_segmenter(cfg.segmenter)
    per_image: dict[str, list[dict]] = {}
    for line in result.detections_path.read_text().splitlines():
        det = json.loads(line)
        per_image.setdefault(det["image_id"], []).append(det)

    sizes = {
        entry["id"]: (entry["width"], entry["height"])
        for entry in json.loads(result.manifest_path.read_text())["images"]
    }

    n_masks = 0
    failures: list[tuple[str, str]] = []
    for image_id in sorted(per_image):
        image_path = _find_image(cfg.image_dir, image_id)
        width, height = sizes[image_id]
        try:
            for index, det in enumerate(per_image[image_id]):
                mask = segment(image_path, (width, height), tuple(det["bbox"]))
                mask = np.asarray(mask, dtype=bool)
                if mask.shape != (height, width):
                    raise AdapterError(
                        f"segmenter returned {mask.shape}, image is {height}x{width}"
                    )
                out = cfg.out_dir / MASKS_TEMPLATE.format(
                    image_id=image_id, index=index
                )
                out.parent.mkdir(parents=True, exist_ok=True)
                buffer = Image.fromarray(mask.astype(np.uint8) * 255, mode="L")
                tmp = out.with_name(f".{out.name}.tmp")
                buffer.save(tmp, format="PNG")
                os.replace(tmp, out)
                n_masks += 1
        except (AdapterError, OSError) as exc:
            failures.append((image_id, str(exc)))
    result.n_masks = n_masks
    result.failures = failures
    return result


def _find_image(image_dir: Path, image_id: str) -> Path:
    for suffix in IMAGE_SUFFIXES:
        candidate = image_dir / f"{image_id}{suffix}"
        if candidate.exists():
            return candidate
    raise AdapterError(f"image {image_id!r} vanished from {image_dir}")


def run_export(cfg: AdapterConfig) -> ExportResult:
    """Full export: detections, manifest, then masks."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return export_masks(cfg, export_detections(cfg))

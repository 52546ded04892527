"""Build synthetic datasets on disk: ground truth, detections, oracle masks.

The scenes come from the oracle module; boxes are extracted from ground
truth, optionally jittered, and masks come from the noisy oracle segmenter.
With ``score_from_quality`` the detection score tracks how well the (noisy)
mask matches the true object, which is what makes a score-threshold sweep
show an interior optimum instead of decaying monotonically.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from . import codec
from .codec import DatasetManifest, PathTemplates
from .core import ClassRegistry, Detection, ImageRef, m4d_registry
from .fusion import derive_image_seed
from .oracle import (
    NoiseSpec,
    SceneSpec,
    extract_gt_boxes,
    generate_scene,
    oracle_segment,
    perturb_detections,
)


@dataclass(frozen=True)
class SynthConfig:
    out_dir: Path
    n_images: int = 20
    width: int = 64
    height: int = 64
    seed: int = 0
    registry: ClassRegistry = field(default_factory=m4d_registry)
    shapes_per_class: Union[int, Mapping[int, int]] = 1
    overlap_bias: float = 0.5
    size_scale: Union[float, Mapping[int, float]] = 1.0
    min_area: int = 1
    morph_radius: int = 0
    boundary_flip_prob: float = 0.0
    box_jitter_sigma: float = 0.0
    score_noise_sigma: float = 0.0
    score_from_quality: bool = False


def _quality_score(
    mask_bits: np.ndarray, gt_labels: np.ndarray, det: Detection
) -> float:
    """IoU between the produced mask and the true object pixels in its box."""
    exact = np.zeros_like(mask_bits, dtype=bool)
    region = det.bbox.slices
    exact[region] = gt_labels[region] == det.category
    produced = mask_bits.astype(bool)
    union = int((produced | exact).sum())
    if union == 0:
        return 0.0
    return float((produced & exact).sum() / union)


def build_dataset(cfg: SynthConfig) -> DatasetManifest:
    """Generate and persist a full dataset; returns the saved manifest."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    templates = PathTemplates()

    images: list[ImageRef] = []
    all_detections: list[Detection] = []
    for i in range(cfg.n_images):
        image_id = f"img_{i:04d}"
        scene_seed = derive_image_seed(cfg.seed, image_id)
        scene = SceneSpec(
            width=cfg.width,
            height=cfg.height,
            shapes_per_class=cfg.shapes_per_class,
            overlap_bias=cfg.overlap_bias,
            size_scale=cfg.size_scale,
            seed=scene_seed,
        )
        gt = generate_scene(scene, cfg.registry)
        codec.write_semantic(gt, out / templates.gt_maps.format(image_id=image_id))

        dets = extract_gt_boxes(gt, cfg.registry, cfg.min_area, image_id=image_id)
        dets = perturb_detections(
            dets,
            NoiseSpec(box_jitter_sigma=cfg.box_jitter_sigma, seed=cfg.seed),
            cfg.width,
            cfg.height,
        )

        mask_noise = NoiseSpec(
            morph_radius=cfg.morph_radius,
            boundary_flip_prob=cfg.boundary_flip_prob,
            seed=cfg.seed,
        )
        final_dets: list[Detection] = []
        for index, det in enumerate(dets):
            mask = oracle_segment(gt, det, mask_noise)
            codec.write_mask(
                mask, out / templates.masks.format(image_id=image_id, index=index)
            )
            base = (
                _quality_score(mask.decode(), gt.labels, det)
                if cfg.score_from_quality
                else det.score
            )
            if cfg.score_noise_sigma > 0.0:
                rng = np.random.default_rng(
                    derive_image_seed(cfg.seed, f"score:{image_id}:{index}")
                )
                base = float(
                    np.clip(base + rng.normal(0.0, cfg.score_noise_sigma), 0.0, 1.0)
                )
            final_dets.append(
                Detection(
                    image_id=image_id,
                    category=det.category,
                    bbox=det.bbox,
                    score=base,
                )
            )
        all_detections.extend(final_dets)
        images.append(ImageRef(image_id=image_id, width=cfg.width, height=cfg.height))

    codec.write_detections(all_detections, out / templates.detections, cfg.registry)
    manifest = DatasetManifest(
        registry=cfg.registry, images=tuple(images), paths=templates, root=out
    )
    codec.save_manifest(manifest, out / "manifest.json")
    return manifest

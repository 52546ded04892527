"""Adapter configuration: which models to run and how to map their labels."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping


class AdapterError(ValueError):
    """Configuration or export problem the operator must fix."""


@dataclass(frozen=True)
class ModelSpec:
    """A model id plus optional weights.

    ``model`` is either the builtin ``"stub"`` (no ML, for CI and dry runs)
    or a ``"package.module:factory"`` dotted path; the factory is called
    with this spec and must return the runnable callable.
    """

    model: str
    weights: str | None = None
    options: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.model:
            raise AdapterError("model id must be non-empty")


@dataclass(frozen=True)
class AdapterConfig:
    """One export run: images in, canonical detection/mask files out."""

    image_dir: Path
    out_dir: Path
    detector: ModelSpec
    segmenter: ModelSpec
    classes: tuple[str, ...]  # engine registry order, background first
    label_map: Mapping[str, str]  # detector vocabulary -> engine class name
    drop_unmapped: bool = False
    device: str = "cpu"
    batch_size: int = 1

    def __post_init__(self) -> None:
        if len(self.classes) < 2:
            raise AdapterError("need a background class and at least one foreground")
        if len(set(self.classes)) != len(self.classes):
            raise AdapterError("duplicate class names")
        background = self.classes[0]
        for label, target in self.label_map.items():
            if target == background:
                raise AdapterError(
                    f"label {label!r} maps to the background class {background!r}"
                )
            if target not in self.classes:
                raise AdapterError(
                    f"label {label!r} maps to unknown class {target!r}"
                )
        if self.batch_size < 1:
            raise AdapterError("batch_size must be >= 1")


def _model_spec(obj: object, what: str) -> ModelSpec:
    if not isinstance(obj, dict) or "model" not in obj:
        raise AdapterError(f"{what} spec needs a 'model' field")
    return ModelSpec(
        model=obj["model"],
        weights=obj.get("weights"),
        options=obj.get("options", {}),
    )


def load_config(path: str | Path) -> AdapterConfig:
    """Read a JSON config file; paths are resolved relative to the file."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise AdapterError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise AdapterError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise AdapterError(f"{path}: config must be a JSON object")
    try:
        base = path.parent
        return AdapterConfig(
            image_dir=(base / obj["image_dir"]).resolve(),
            out_dir=(base / obj["out_dir"]).resolve(),
            detector=_model_spec(obj["detector"], "detector"),
            segmenter=_model_spec(obj["segmenter"], "segmenter"),
            classes=tuple(obj["classes"]),
            label_map=dict(obj.get("label_map", {})),
            drop_unmapped=bool(obj.get("drop_unmapped", False)),
            device=obj.get("device", "cpu"),
            batch_size=int(obj.get("batch_size", 1)),
        )
    except KeyError as missing:
        raise AdapterError(f"{path}: missing field {missing}") from None
    except TypeError as exc:
        raise AdapterError(f"{path}: malformed config ({exc})") from None

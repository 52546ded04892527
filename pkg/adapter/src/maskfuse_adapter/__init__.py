"""maskfuse-adapter: bridge real models to the maskfuse wire formats."""

from .backends import RawDetection, load_detector, load_segmenter
from .config import AdapterConfig, AdapterError, ModelSpec, load_config
from .export import ExportResult, export_detections, export_masks, run_export

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "AdapterError",
    "ExportResult",
    "ModelSpec",
    "RawDetection",
    "export_detections",
    "export_masks",
    "load_config",
    "load_detector",
    "load_segmenter",
    "run_export",
]

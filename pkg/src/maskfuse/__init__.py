"""maskfuse: ordered mask fusion engine and segmentation evaluation harness."""

from .core import (
    BACKGROUND_ID,
    BinaryMask,
    BoundingBox,
    ClassRegistry,
    Detection,
    FusionOrder,
    ImageRef,
    LabeledMask,
    SemanticMap,
    ValidationError,
    m4d_registry,
    make_registry,
    mask_decode,
    mask_encode,
)
from .fusion import (
    FilterConfig,
    OrderedFusion,
    RandomFusion,
    all_fusion_orders,
    derive_image_seed,
    filter_detections,
    fuse_pipeline,
    ordered_mask_fusion,
    random_mask_fusion,
)
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    confusion_accumulate,
    f1_from_iou,
    iou_per_class,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND_ID",
    "BinaryMask",
    "BoundingBox",
    "ClassRegistry",
    "ConfusionMatrix",
    "Detection",
    "FilterConfig",
    "FusionOrder",
    "ImageRef",
    "LabeledMask",
    "MetricsReport",
    "OrderedFusion",
    "RandomFusion",
    "SemanticMap",
    "ValidationError",
    "all_fusion_orders",
    "confusion_accumulate",
    "derive_image_seed",
    "f1_from_iou",
    "filter_detections",
    "fuse_pipeline",
    "iou_per_class",
    "m4d_registry",
    "make_registry",
    "mask_decode",
    "mask_encode",
    "ordered_mask_fusion",
    "random_mask_fusion",
    "summarize",
]

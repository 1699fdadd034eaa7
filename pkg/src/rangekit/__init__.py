"""LiDAR range-view toolkit: rasterization, grid-level augmentation, azimuth
views, sub-cloud post-processing, segmentation metrics, and a NumPy forward
pass of a range-view transformer segmenter."""

from .types import (
    EMPTY,
    IGNORE_LABEL,
    NUSCENES_SENSOR,
    OUT_OF_FOV,
    SEMANTIC_KITTI,
    SEMANTIC_KITTI_SENSOR,
    ClassTaxonomy,
    Point,
    PointCloud,
    Projection,
    RangeImage,
    SensorSpec,
    validate,
)
from .raster import project_point, rasterize, unproject
from .views import partition, rasterize_view, stitch
from .post import range_post, subcloud_split, subcloud_stitch
from .metrics import ConfusionMatrix, PanopticEvaluator, miou, panoptic_quality

__version__ = "0.1.0"

__all__ = [
    "EMPTY", "IGNORE_LABEL", "NUSCENES_SENSOR", "OUT_OF_FOV", "SEMANTIC_KITTI",
    "SEMANTIC_KITTI_SENSOR", "ClassTaxonomy", "Point", "PointCloud", "Projection",
    "RangeImage", "SensorSpec", "validate", "project_point", "rasterize", "unproject",
    "partition", "rasterize_view", "stitch", "range_post", "subcloud_split",
    "subcloud_stitch", "ConfusionMatrix", "PanopticEvaluator", "miou", "panoptic_quality",
]

"""Power-grid graph inference from tower detections and line rasters, with benchmark scoring."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    GeoScale,
    GridGraph,
    Kind,
    PixelPoint,
    TowerBox,
    box_iou,
    centroid,
    centroid_distance_m,
)
from .estimator import GridTracer, TowerPostprocessor  # noqa: E402
from .infer import InferParams, filter_by_confidence, infer_adjacency, nms, path_score  # noqa: E402
from .raster import BinaryMask, ProbRaster, mask_iou, rasterize_gt_lines, thick_segment_pixels  # noqa: E402

__all__ = [
    "BinaryMask",
    "GeoScale",
    "GridGraph",
    "GridTracer",
    "InferParams",
    "Kind",
    "PixelPoint",
    "ProbRaster",
    "TowerBox",
    "TowerPostprocessor",
    "box_iou",
    "centroid",
    "centroid_distance_m",
    "filter_by_confidence",
    "infer_adjacency",
    "mask_iou",
    "nms",
    "path_score",
    "rasterize_gt_lines",
    "thick_segment_pixels",
]

"""Tar spot detection and quantification on corn-leaf RGB images.

Classical pipeline: HSV value and CIELAB a* thresholding, OR fusion,
morphological cleanup, and connected-component instancing; plus threshold
calibration, sliding-window detection with vote fusion, instance-level
evaluation, COCO-style dataset interchange, and a synthetic-leaf
generator for benchmarks. Heavy kernels run compiled (numba) with a pure
numpy fallback selected by the TARSPOT_BACKEND environment variable.
"""

from .backend import active_backend, set_backend, set_num_threads
from .binmorph import (
    BOX3,
    Instance,
    InstanceSet,
    StructuringElement,
    closing,
    connected_components,
    dilate,
    erode,
    filter_min_area,
    instances_from_labels,
    label_mask,
    largest_component,
    opening,
)
from .color import ChannelPlane, rgb_to_hsv, rgb_to_lab, spot_planes, validate_rgb
from .autogt import (
    CalibrationResult,
    SeverityReport,
    ThresholdConfig,
    ThresholdGrid,
    auto_ground_truth,
    calibrate_thresholds,
    fuse_or,
    leaf_mask,
    severity,
    spot_mask,
    threshold_dark,
    threshold_nongreen,
    write_score_surface,
)
from .tiling import TileConfig, TileGrid, VoteField, accumulate, fuse_votes, make_grid
from .detector import (
    Detection,
    DetectorSpec,
    detect,
    detect_batch,
    detect_tiled,
    detections_to_instances,
)
from .metrics import (
    EvalReport,
    MatchConfig,
    MatchResult,
    evaluate,
    f1_from_counts,
    match_instances,
    pairwise_iou,
    time_detection,
)
from .annot import (
    ImageRef,
    RleMask,
    export_coco,
    import_coco,
    load_image,
    render_overlay,
    rle_decode,
    rle_encode,
    save_image,
    split_dataset,
)
from .errors import (
    ContractError,
    DegenerateInputError,
    DetectorError,
    DetectorProcessError,
    DetectorProtocolError,
    DetectorTimeoutError,
    ManifestError,
    ManifestReferenceError,
    ManifestSchemaError,
    RleDecodeError,
    TarspotError,
    UnsupportedSegmentationError,
)

__version__ = "0.1.0"

__all__ = [
    "BOX3",
    "CalibrationResult",
    "ChannelPlane",
    "ContractError",
    "DegenerateInputError",
    "Detection",
    "DetectorError",
    "DetectorProcessError",
    "DetectorProtocolError",
    "DetectorSpec",
    "DetectorTimeoutError",
    "EvalReport",
    "ImageRef",
    "Instance",
    "InstanceSet",
    "ManifestError",
    "ManifestReferenceError",
    "ManifestSchemaError",
    "MatchConfig",
    "MatchResult",
    "RleDecodeError",
    "RleMask",
    "SeverityReport",
    "StructuringElement",
    "TarspotError",
    "ThresholdConfig",
    "ThresholdGrid",
    "TileConfig",
    "TileGrid",
    "UnsupportedSegmentationError",
    "VoteField",
    "accumulate",
    "active_backend",
    "auto_ground_truth",
    "calibrate_thresholds",
    "closing",
    "connected_components",
    "detect",
    "detect_batch",
    "detect_tiled",
    "detections_to_instances",
    "dilate",
    "erode",
    "evaluate",
    "export_coco",
    "f1_from_counts",
    "filter_min_area",
    "fuse_or",
    "fuse_votes",
    "import_coco",
    "instances_from_labels",
    "label_mask",
    "largest_component",
    "leaf_mask",
    "load_image",
    "make_grid",
    "match_instances",
    "opening",
    "pairwise_iou",
    "render_overlay",
    "rgb_to_hsv",
    "rgb_to_lab",
    "rle_decode",
    "rle_encode",
    "save_image",
    "set_backend",
    "set_num_threads",
    "severity",
    "split_dataset",
    "spot_mask",
    "spot_planes",
    "threshold_dark",
    "threshold_nongreen",
    "time_detection",
    "validate_rgb",
    "write_score_surface",
]

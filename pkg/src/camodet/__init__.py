"""Box-level camouflaged-object detection toolkit.

Dataset conversion from segmentation masks, grid-mosaic pseudo-image
augmentation, a toy staged detector with restricted backpropagation, and
COCO-style evaluation. Hot kernels run under numba when available; set
CAMODET_NUMBA=0 to force the pure-numpy fallback or 1 to require numba.
"""

from camodet.dataset import (
    Category,
    DetectionDataset,
    LabeledBox,
    Sample,
    connected_components,
    dataset_summary,
    mask_to_boxes,
    merge_boxes,
    read_annotations,
    write_annotations,
)
from camodet.evaluation import (
    Detection,
    EvalReport,
    coco_metrics,
    localization_score,
)
from camodet.geometry import Box, RectTransform, giou, iou, transform_box
from camodet.model import (
    LossConfig,
    ModelConfig,
    RegionInput,
    RestrictionConfig,
    StagedParams,
    backward_restricted,
    contrastive_loss,
    detection_loss,
    focal_loss,
    forward_staged,
    giou_loss,
    gradient_check,
)
from camodet.mosaic import (
    CropPatch,
    GridSpec,
    MosaicCanvas,
    assemble_canvas,
    augment_batch_online,
    crop_region,
    generate_offline,
    make_grids,
    partition_pool,
)
from camodet.training import make_blob_dataset, train_toy

__version__ = "0.1.0"

__all__ = [
    "Box",
    "Category",
    "CropPatch",
    "Detection",
    "DetectionDataset",
    "EvalReport",
    "GridSpec",
    "LabeledBox",
    "LossConfig",
    "ModelConfig",
    "MosaicCanvas",
    "RectTransform",
    "RegionInput",
    "RestrictionConfig",
    "Sample",
    "StagedParams",
    "assemble_canvas",
    "augment_batch_online",
    "backward_restricted",
    "coco_metrics",
    "connected_components",
    "contrastive_loss",
    "crop_region",
    "dataset_summary",
    "detection_loss",
    "focal_loss",
    "forward_staged",
    "generate_offline",
    "giou",
    "giou_loss",
    "gradient_check",
    "iou",
    "localization_score",
    "make_blob_dataset",
    "make_grids",
    "mask_to_boxes",
    "merge_boxes",
    "partition_pool",
    "read_annotations",
    "train_toy",
    "transform_box",
    "write_annotations",
]

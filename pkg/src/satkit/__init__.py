"""Scale-adaptive tokenization toolkit.

Patch-level scale maps drive token replacement (small-scale regions get
4x high-res detail), background pooling, and assembly into one mixed-
resolution sequence feeding a miniature set-prediction network, with the
full matching-loss stack, evaluation metrics, and a compute-cost model.
"""

from ._kernels import BACKEND_NAME as kernel_backend
from .geometry import BBox, Camera, ImageDims, giou, iou, person_scale
from .scale_map import PatchClass, ScaleMap, Thresholds, build_gt_scale_map, classify
from .token_engine import (CostModel, PatchGrid, TokenLayout, assemble,
                           attention_cost, partition)

__version__ = "0.1.0"

__all__ = [
    "BBox", "Camera", "ImageDims", "giou", "iou", "person_scale",
    "PatchClass", "ScaleMap", "Thresholds", "build_gt_scale_map", "classify",
    "CostModel", "PatchGrid", "TokenLayout", "assemble", "attention_cost",
    "partition", "kernel_backend", "__version__",
]

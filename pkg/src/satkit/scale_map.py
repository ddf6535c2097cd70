"""Patch-level scale maps and the background/small/large classification.

A scale map stores one (confidence, scale) pair per low-res patch. Ground
truth maps are binary in confidence; predicted maps carry the continuous
outputs of the scale head. Thresholding conventions (declared, since the
boundary direction is a convention): confidence >= the confidence threshold
marks a person patch, and scale >= the scale threshold marks it large.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import _kernels
from .errors import InvalidAnnotationError, InvalidArgumentError
from .geometry import person_scale

if TYPE_CHECKING:  # import cycle: token_engine owns PatchGrid
    from .scene import PersonAnnotation
    from .token_engine import PatchGrid


class PatchClass(enum.IntEnum):
    BACKGROUND = 0
    SMALL = 1
    LARGE = 2


@dataclass(frozen=True)
class Thresholds:
    """Classification thresholds, each in [0, 1]."""

    confidence: float = 0.3
    scale: float = 0.5
    detection: float = 0.5

    def __post_init__(self):
        for name in ("confidence", "scale", "detection"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise InvalidArgumentError(
                    f"threshold {name} must be in [0, 1], got {val}")


@dataclass
class ScaleMap:
    """Per-patch (confidence, scale) grids, both float64 in [0, 1]."""

    confidence: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if self.confidence.shape != self.scale.shape or self.confidence.ndim != 2:
            raise InvalidArgumentError("confidence/scale grids must match and be 2-D")
        for name, grid in (("confidence", self.confidence), ("scale", self.scale)):
            if np.any(grid < 0.0) or np.any(grid > 1.0):
                raise InvalidArgumentError(f"{name} values must be in [0, 1]")

    @property
    def rows(self) -> int:
        return self.confidence.shape[0]

    @property
    def cols(self) -> int:
        return self.confidence.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "confidence": self.confidence.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ScaleMap":
        m = cls(confidence=np.array(payload["confidence"]),
                scale=np.array(payload["scale"]))
        if (m.rows, m.cols) != (payload["rows"], payload["cols"]):
            raise InvalidArgumentError("scale map dims disagree with payload")
        return m


def build_gt_scale_map(grid: "PatchGrid",
                       persons: Sequence["PersonAnnotation"],
                       longest_side_hr: float) -> ScaleMap:
    """Ground-truth scale map from person boxes.

    A patch is a person patch (confidence 1) when its pixel rectangle,
    mapped to the high-res frame, has positive-area overlap with at least
    one person box. Its scale is the scale of the nearest (minimum-depth)
    overlapping person; equal depths resolve to the larger scale. Background
    patches carry scale 0.
    """
    boxes = np.zeros((len(persons), 4), dtype=np.float64)
    depths = np.zeros(len(persons), dtype=np.float64)
    scales = np.zeros(len(persons), dtype=np.float64)
    for idx, person in enumerate(persons):
        if person.root_depth <= 0:
            raise InvalidAnnotationError(
                f"person {idx} has non-positive depth {person.root_depth}")
        b = person.bbox
        boxes[idx] = (b.x_min, b.y_min, b.x_max, b.y_max)
        depths[idx] = person.root_depth
        scales[idx] = person_scale(b, longest_side_hr)

    # Patches live on the low-res grid; one patch spans 2P high-res pixels.
    conf, scale = _kernels.rasterize_scale_map(
        grid.rows, grid.cols, 2.0 * grid.patch_size, boxes, depths, scales)
    return ScaleMap(confidence=conf, scale=scale)


def classify(scale_map: ScaleMap, thresholds: Thresholds) -> np.ndarray:
    """Partition patches: background, then small vs large by scale.

    Returns a (rows, cols) uint8 grid of :class:`PatchClass` values.
    """
    out = np.full((scale_map.rows, scale_map.cols), PatchClass.LARGE,
                  dtype=np.uint8)
    out[scale_map.scale < thresholds.scale] = PatchClass.SMALL
    out[scale_map.confidence < thresholds.confidence] = PatchClass.BACKGROUND
    return out

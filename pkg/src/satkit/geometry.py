"""Camera model, bounding-box algebra, and the person-scale definition.

All geometry is computed in double precision. Boxes are stored in corner
form (x_min, y_min, x_max, y_max); the center-size form used by decoder
anchors is available through :meth:`BBox.to_cxcywh` / :meth:`BBox.from_cxcywh`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidArgumentError, BehindCameraError


@dataclass(frozen=True)
class ImageDims:
    """Image size in pixels."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError(f"image dims must be >= 1, got {self}")

    @property
    def longest(self) -> int:
        return max(self.width, self.height)

    def halved(self) -> "ImageDims":
        """Low-res dims for a high-res image; both sides must be even."""
        if self.width % 2 or self.height % 2:
            raise InvalidArgumentError(
                f"high-res dims must be even to halve, got {self}")
        return ImageDims(self.width // 2, self.height // 2)

    def doubled(self) -> "ImageDims":
        return ImageDims(self.width * 2, self.height * 2)


def focal_from_fov(longest_side: float, fov_deg: float) -> float:
    """Focal length (pixels) of a pinhole camera with the given field of view.

    ``longest_side`` is the longer image side in pixels.
    """
    if longest_side <= 0:
        raise InvalidArgumentError(f"longest_side must be > 0, got {longest_side}")
    if not 0.0 < fov_deg < 180.0:
        raise InvalidArgumentError(f"fov must be in (0, 180) degrees, got {fov_deg}")
    return longest_side / (2.0 * math.tan(math.radians(fov_deg) / 2.0))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: focal length plus principal point, both in pixels."""

    focal: float
    principal_point: tuple[float, float]
    fov_deg: float | None = None

    def __post_init__(self):
        if self.focal <= 0:
            raise InvalidArgumentError(f"focal must be > 0, got {self.focal}")

    @classmethod
    def from_fov(cls, dims: ImageDims, fov_deg: float = 60.0) -> "Camera":
        """Camera with principal point at the image center and focal from FOV."""
        focal = focal_from_fov(dims.longest, fov_deg)
        return cls(focal=focal,
                   principal_point=(dims.width / 2.0, dims.height / 2.0),
                   fov_deg=fov_deg)


def project(point, camera: Camera) -> tuple[float, float]:
    """Project a 3D camera-frame point (meters) to pixel coordinates."""
    x, y, z = float(point[0]), float(point[1]), float(point[2])
    if z <= 0:
        raise BehindCameraError(f"cannot project point with z={z} <= 0")
    pu, pv = camera.principal_point
    return (camera.focal * x / z + pu, camera.focal * y / z + pv)


def unproject(uv, z: float, camera: Camera) -> tuple[float, float, float]:
    """Invert :func:`project` given the point's depth."""
    if z <= 0:
        raise BehindCameraError(f"cannot unproject with z={z} <= 0")
    pu, pv = camera.principal_point
    return ((uv[0] - pu) * z / camera.focal, (uv[1] - pv) * z / camera.focal, z)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in corner form; coordinates in any consistent frame."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise InvalidArgumentError(f"inverted box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def to_cxcywh(self) -> tuple[float, float, float, float]:
        return ((self.x_min + self.x_max) / 2.0,
                (self.y_min + self.y_max) / 2.0,
                self.width, self.height)

    @classmethod
    def from_cxcywh(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    def scaled(self, sx: float, sy: float) -> "BBox":
        """Scale coordinates axis-wise (e.g. pixel frame -> unit frame)."""
        return BBox(self.x_min * sx, self.y_min * sy,
                    self.x_max * sx, self.y_max * sy)


def person_scale(box: BBox, longest_side_hr: float) -> float:
    """Relative person size: box diagonal over the longest image side, <= 1."""
    if longest_side_hr <= 0:
        raise InvalidArgumentError(
            f"longest_side_hr must be > 0, got {longest_side_hr}")
    return min(box.diagonal / longest_side_hr, 1.0)


def _intersection_area(a: BBox, b: BBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for a zero-area union."""
    inter = _intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU: IoU minus the enclosure-gap penalty.

    Degenerate case (zero-area union AND zero-area enclosure, i.e. two
    identical zero-area boxes) is defined as 0.
    """
    inter = _intersection_area(a, b)
    union = a.area + b.area - inter
    enc_w = max(a.x_max, b.x_max) - min(a.x_min, b.x_min)
    enc_h = max(a.y_max, b.y_max) - min(a.y_min, b.y_min)
    enclosure = enc_w * enc_h
    if enclosure <= 0:
        return 0.0
    iou_val = inter / union if union > 0 else 0.0
    return iou_val - (enclosure - union) / enclosure

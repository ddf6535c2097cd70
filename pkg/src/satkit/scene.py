"""Scene and run-config files: schemas, validation, synthesis.

Scenes are JSON with an explicit ``schema_version``; unknown fields are
rejected so typos fail loudly. A scene carries annotations (boxes, depths,
body parameters) plus optional raw pixel arrays; it never embeds encoded
images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import body_model as bm
from .errors import SceneFormatError, SceneValidationError
from .geometry import BBox, Camera, ImageDims

SCENE_SCHEMA_VERSION = 1
CONFIG_SCHEMA_VERSION = 1


@dataclass
class PersonAnnotation:
    """One individual: box and depth always; body parameters when known."""

    bbox: BBox
    root_depth: float
    pose: np.ndarray | None = None         # (J, 3) axis-angle
    shape: np.ndarray | None = None        # (B,)
    translation: np.ndarray | None = None  # (3,)
    joints3d: np.ndarray | None = None     # (J_out, 3), camera frame

    def params(self) -> bm.SmplParams:
        if self.pose is None or self.shape is None or self.translation is None:
            raise SceneValidationError(
                "person lacks body parameters required for this operation")
        return bm.SmplParams(pose=self.pose, shape=self.shape,
                             translation=self.translation)


@dataclass
class SceneFile:
    """Validated scene: dims, camera FOV, patch size, persons, model ref."""

    dims_hr: ImageDims
    patch_size: int
    fov_deg: float
    persons: list[PersonAnnotation]
    body_model_ref: dict = field(default_factory=lambda: {"kind": "mini", "seed": 0})
    pixels_low: np.ndarray | None = None
    pixels_high: np.ndarray | None = None

    @property
    def dims_lr(self) -> ImageDims:
        return self.dims_hr.halved()

    def camera(self) -> Camera:
        return Camera.from_fov(self.dims_hr, self.fov_deg)

    def resolve_body_model(self, base_dir: Path | None = None) -> bm.BodyModelDef:
        ref = self.body_model_ref
        if ref["kind"] == "mini":
            return bm.make_mini_model(int(ref["seed"]))
        path = Path(ref["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return bm.load_model(path)

    def images(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel arrays, zero-filled when the scene carries no pixels."""
        lr, hr = self.dims_lr, self.dims_hr
        low = (self.pixels_low if self.pixels_low is not None
               else np.zeros((lr.height, lr.width, 3)))
        high = (self.pixels_high if self.pixels_high is not None
                else np.zeros((hr.height, hr.width, 3)))
        return low, high


def _require_keys(payload: dict, allowed: set[str], required: set[str],
                  where: str) -> None:
    unknown = set(payload) - allowed
    if unknown:
        raise SceneFormatError(f"{where}: unknown fields {sorted(unknown)}")
    missing = required - set(payload)
    if missing:
        raise SceneFormatError(f"{where}: missing fields {sorted(missing)}")


def _array(value: Any, shape: tuple, where: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise SceneValidationError(f"{where}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SceneValidationError(f"{where}: non-finite values")
    return arr


def _parse_person(payload: dict, dims_hr: ImageDims, idx: int) -> PersonAnnotation:
    where = f"persons[{idx}]"
    _require_keys(payload,
                  {"bbox", "root_depth", "pose", "shape", "translation", "joints3d"},
                  {"bbox", "root_depth"}, where)
    box_vals = payload["bbox"]
    if len(box_vals) != 4:
        raise SceneValidationError(f"{where}.bbox: expected 4 values")
    try:
        box = BBox(*[float(v) for v in box_vals])
    except Exception as exc:
        raise SceneValidationError(f"{where}.bbox: {exc}") from exc
    if (box.x_min < 0 or box.y_min < 0 or box.x_max > dims_hr.width
            or box.y_max > dims_hr.height):
        raise SceneValidationError(
            f"{where}.bbox: outside the high-res frame {dims_hr}")
    depth = float(payload["root_depth"])
    if depth <= 0:
        raise SceneValidationError(f"{where}.root_depth: must be > 0, got {depth}")

    def opt(key: str, shape) -> np.ndarray | None:
        value = payload.get(key)
        if value is None:
            return None
        if shape is None:  # (J, 3) with free J
            arr = np.asarray(value, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise SceneValidationError(f"{where}.{key}: expected (J, 3)")
            if not np.all(np.isfinite(arr)):
                raise SceneValidationError(f"{where}.{key}: non-finite values")
            return arr
        return _array(value, shape, f"{where}.{key}")

    return PersonAnnotation(
        bbox=box, root_depth=depth,
        pose=opt("pose", None),
        shape=opt("shape", (bm.SHAPE_COUNT,)),
        translation=opt("translation", (3,)),
        joints3d=opt("joints3d", None),
    )


def parse_scene(payload: dict) -> SceneFile:
    if not isinstance(payload, dict):
        raise SceneFormatError("scene must be a JSON object")
    _require_keys(payload,
                  {"schema_version", "width_hr", "height_hr", "patch_size",
                   "fov_deg", "body_model", "persons", "pixels"},
                  {"schema_version", "width_hr", "height_hr", "patch_size",
                   "fov_deg", "persons"}, "scene")
    if payload["schema_version"] != SCENE_SCHEMA_VERSION:
        raise SceneFormatError(
            f"unsupported scene schema_version {payload['schema_version']}")

    w, h = int(payload["width_hr"]), int(payload["height_hr"])
    if w < 2 or h < 2 or w % 2 or h % 2:
        raise SceneValidationError(
            f"width_hr/height_hr must be positive and even, got {w}x{h}")
    dims_hr = ImageDims(w, h)
    patch_size = int(payload["patch_size"])
    if patch_size < 1:
        raise SceneValidationError(f"patch_size must be >= 1, got {patch_size}")
    fov = float(payload["fov_deg"])
    if not 0.0 < fov < 180.0:
        raise SceneValidationError(f"fov_deg must be in (0, 180), got {fov}")

    ref = payload.get("body_model") or {"kind": "mini", "seed": 0}
    if ref.get("kind") not in ("mini", "file"):
        raise SceneFormatError(f"body_model.kind must be mini|file, got {ref}")

    persons = [_parse_person(p, dims_hr, i)
               for i, p in enumerate(payload["persons"])]

    pixels_low = pixels_high = None
    pix = payload.get("pixels")
    if pix is not None:
        _require_keys(pix, {"low", "high"}, {"low", "high"}, "pixels")
        lr = dims_hr.halved()
        pixels_low = _array(pix["low"], (lr.height, lr.width, 3), "pixels.low")
        pixels_high = _array(pix["high"], (h, w, 3), "pixels.high")

    return SceneFile(dims_hr=dims_hr, patch_size=patch_size, fov_deg=fov,
                     persons=persons, body_model_ref=dict(ref),
                     pixels_low=pixels_low, pixels_high=pixels_high)


def scene_to_json_dict(scene: SceneFile) -> dict:
    persons = []
    for p in scene.persons:
        persons.append({
            "bbox": [p.bbox.x_min, p.bbox.y_min, p.bbox.x_max, p.bbox.y_max],
            "root_depth": p.root_depth,
            "pose": None if p.pose is None else p.pose.tolist(),
            "shape": None if p.shape is None else p.shape.tolist(),
            "translation": None if p.translation is None else p.translation.tolist(),
            "joints3d": None if p.joints3d is None else p.joints3d.tolist(),
        })
    payload = {
        "schema_version": SCENE_SCHEMA_VERSION,
        "width_hr": scene.dims_hr.width,
        "height_hr": scene.dims_hr.height,
        "patch_size": scene.patch_size,
        "fov_deg": scene.fov_deg,
        "body_model": scene.body_model_ref,
        "persons": persons,
        "pixels": None,
    }
    if scene.pixels_low is not None:
        payload["pixels"] = {"low": scene.pixels_low.tolist(),
                             "high": scene.pixels_high.tolist()}
    return payload


def load_scene(path: str | Path) -> SceneFile:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return parse_scene(payload)


def save_scene(scene: SceneFile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_json_dict(scene), indent=1))


def synthetic_scene(seed: int, dims_hr: ImageDims = ImageDims(644, 364),
                    max_persons: int = 8, patch_size: int = 14,
                    model: bm.BodyModelDef | None = None) -> SceneFile:
    """Random but self-consistent scene for sweeps and tests.

    Persons get boxes spread over the frame, depths increasing with
    smallness, and body parameters whose translation places them at the
    annotated depth behind the box center.
    """
    rng = np.random.default_rng(seed)
    if model is None:
        model = bm.make_mini_model(0)
    cam = Camera.from_fov(dims_hr)
    n = int(rng.integers(1, max_persons + 1))
    persons = []
    for _ in range(n):
        # Person apparent height between ~4% and ~95% of the frame height.
        height = rng.uniform(0.04, 0.95) * dims_hr.height
        width = height * rng.uniform(0.25, 0.6)
        x0 = rng.uniform(0, max(dims_hr.width - width, 1))
        y0 = rng.uniform(0, max(dims_hr.height - height, 1))
        box = BBox(x0, y0, min(x0 + width, dims_hr.width),
                   min(y0 + height, dims_hr.height))
        # Depth roughly consistent with a ~1.7 m person under the camera focal.
        depth = cam.focal * 1.7 / box.height * rng.uniform(0.9, 1.1)
        cx, cy = (box.x_min + box.x_max) / 2, (box.y_min + box.y_max) / 2
        tx = (cx - cam.principal_point[0]) * depth / cam.focal
        ty = (cy - cam.principal_point[1]) * depth / cam.focal
        pose = rng.normal(0.0, 0.1, size=(model.joint_count, 3))
        shape = rng.normal(0.0, 0.5, size=model.blendshapes.shape[2])
        translation = np.array([tx, ty, depth])
        params = bm.SmplParams(pose=pose, shape=shape, translation=translation)
        joints = bm.regress_joints(bm.forward(params, model),
                                   model.joint_regressor)
        persons.append(PersonAnnotation(
            bbox=box, root_depth=depth, pose=pose, shape=shape,
            translation=translation, joints3d=joints))
    return SceneFile(dims_hr=dims_hr, patch_size=patch_size, fov_deg=60.0,
                     persons=persons,
                     body_model_ref={"kind": "mini", "seed": 0})

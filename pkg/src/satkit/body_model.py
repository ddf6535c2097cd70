"""Parametric body: blendshapes + linear blend skinning + joint regression.

The same structures hold a real 6890-vertex body loaded from JSON and the
small deterministic stand-in built by :func:`make_mini_model`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

JOINT_COUNT = 24
SHAPE_COUNT = 10

# Standard 24-joint kinematic tree: pelvis root, spine chain, limbs.
_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
            9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)


@dataclass
class BodyModelDef:
    """Immutable-by-convention model definition; validated on construction.

    ``template`` (V, 3) meters, ``blendshapes`` (V, 3, B), ``parents`` (J,),
    ``rest_regressor`` (J, V) with unit row sums, ``skin_weights`` (V, J)
    with unit row sums, ``joint_regressor`` (J_out, V) with unit row sums.
    """

    template: np.ndarray
    blendshapes: np.ndarray
    parents: np.ndarray
    rest_regressor: np.ndarray
    skin_weights: np.ndarray
    joint_regressor: np.ndarray
    root_joint: int = 0
    name: str = "body"

    def __post_init__(self):
        self.template = np.asarray(self.template, dtype=np.float64)
        self.blendshapes = np.asarray(self.blendshapes, dtype=np.float64)
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.rest_regressor = np.asarray(self.rest_regressor, dtype=np.float64)
        self.skin_weights = np.asarray(self.skin_weights, dtype=np.float64)
        self.joint_regressor = np.asarray(self.joint_regressor, dtype=np.float64)
        self.validate()

    @property
    def vertex_count(self) -> int:
        return self.template.shape[0]

    @property
    def joint_count(self) -> int:
        return self.parents.shape[0]

    @property
    def output_joint_count(self) -> int:
        return self.joint_regressor.shape[0]

    def validate(self) -> None:
        v = self.vertex_count
        j = self.joint_count
        if self.template.shape != (v, 3):
            raise InvalidArgumentError("template must be (V, 3)")
        if self.blendshapes.shape[:2] != (v, 3) or self.blendshapes.ndim != 3:
            raise InvalidArgumentError("blendshapes must be (V, 3, B)")
        if self.rest_regressor.shape != (j, v):
            raise InvalidArgumentError("rest_regressor must be (J, V)")
        if self.skin_weights.shape != (v, j):
            raise InvalidArgumentError("skin_weights must be (V, J)")
        if self.joint_regressor.shape[1] != v:
            raise InvalidArgumentError("joint_regressor must be (J_out, V)")
        for mat, label in ((self.skin_weights, "skin_weights"),
                           (self.rest_regressor, "rest_regressor"),
                           (self.joint_regressor, "joint_regressor")):
            sums = mat.sum(axis=1)
            if not np.allclose(sums, 1.0, atol=1e-9):
                raise InvalidArgumentError(f"{label} rows must sum to 1")
        if self.parents[0] != -1 or np.any(self.parents[1:] < 0):
            raise InvalidArgumentError("parents must have a single root at index 0")
        if np.any(self.parents[1:] >= np.arange(1, j)):
            raise InvalidArgumentError("parents must be topologically ordered")
        if not 0 <= self.root_joint < j:
            raise InvalidArgumentError("root_joint out of range")


@dataclass(frozen=True)
class SmplParams:
    """Per-person parameters: per-joint axis-angle pose, shape, translation."""

    pose: np.ndarray = field(default_factory=lambda: np.zeros((JOINT_COUNT, 3)))
    shape: np.ndarray = field(default_factory=lambda: np.zeros(SHAPE_COUNT))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=np.float64))
        object.__setattr__(self, "shape", np.asarray(self.shape, dtype=np.float64))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64))
        if self.pose.ndim != 2 or self.pose.shape[1] != 3:
            raise InvalidArgumentError("pose must be (J, 3) axis-angle")
        if self.shape.ndim != 1 or self.translation.shape != (3,):
            raise InvalidArgumentError("shape must be (B,), translation (3,)")


def rodrigues(vec: np.ndarray) -> np.ndarray:
    """Axis-angle vector to rotation matrix, stable near zero angle."""
    vec = np.asarray(vec, dtype=np.float64)
    angle = float(np.linalg.norm(vec))
    kx, ky, kz = vec
    skew = np.array([[0.0, -kz, ky],
                     [kz, 0.0, -kx],
                     [-ky, kx, 0.0]])
    if angle < 1e-8:
        # Truncated series in the full rotation vector; exact to O(angle^4).
        a = 1.0 - angle * angle / 6.0
        b = 0.5 - angle * angle / 24.0
    else:
        a = np.sin(angle) / angle
        b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * skew + b * (skew @ skew)


def forward(params: SmplParams, model: BodyModelDef) -> np.ndarray:
    """Posed mesh vertices (V, 3): blendshapes, then LBS, then translation."""
    if not (np.all(np.isfinite(params.pose)) and np.all(np.isfinite(params.shape))
            and np.all(np.isfinite(params.translation))):
        raise InvalidArgumentError("non-finite body parameters")
    if params.pose.shape[0] != model.joint_count:
        raise InvalidArgumentError(
            f"pose has {params.pose.shape[0]} joints, model has {model.joint_count}")
    n_shape = model.blendshapes.shape[2]
    if params.shape.shape[0] != n_shape:
        raise InvalidArgumentError(
            f"shape has {params.shape.shape[0]} coefficients, model has {n_shape}")

    v_shaped = model.template + model.blendshapes @ params.shape
    j_rest = model.rest_regressor @ v_shaped

    # Skinning transform of joint k maps rest-frame points by
    # R_world[k] . x + D[k] with D[k] = t_world[k] - R_world[k] . j_rest[k].
    # The recurrence D[k] = D[p] + R_world[p] (I - R[k]) j_rest[k] computes
    # that offset without ever forming t_world, so identity rotations give
    # exactly zero offsets and the template passes through untouched.
    j = model.joint_count
    rot_world = np.zeros((j, 3, 3))
    offset = np.zeros((j, 3))
    eye = np.eye(3)
    rot_world[0] = rodrigues(params.pose[0])
    offset[0] = (eye - rot_world[0]) @ j_rest[0]
    for k in range(1, j):
        p = model.parents[k]
        rot = rodrigues(params.pose[k])
        offset[k] = offset[p] + rot_world[p] @ ((eye - rot) @ j_rest[k])
        rot_world[k] = rot_world[p] @ rot

    blended_rot = np.einsum("vj,jab->vab", model.skin_weights, rot_world)
    blended_off = model.skin_weights @ offset
    posed = np.einsum("vab,vb->va", blended_rot, v_shaped) + blended_off
    return posed + params.translation


def regress_joints(vertices: np.ndarray, regressor: np.ndarray) -> np.ndarray:
    """Joint locations as convex combinations of vertices: regressor @ V."""
    vertices = np.asarray(vertices, dtype=np.float64)
    regressor = np.asarray(regressor, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise InvalidArgumentError("vertices must be (V, 3)")
    if regressor.shape[1] != vertices.shape[0]:
        raise InvalidArgumentError(
            f"regressor expects {regressor.shape[1]} vertices, "
            f"got {vertices.shape[0]}")
    return regressor @ vertices


def make_mini_model(seed: int = 0) -> BodyModelDef:
    """Small deterministic body (24 joints, 192 vertices) for desk-scale runs.

    Vertices form rings centered exactly on the rest joints, so the uniform
    per-ring regressor reproduces the joints from the template.
    """
    rng = np.random.default_rng(seed)
    parents = np.array(_PARENTS, dtype=np.int64)
    j = parents.shape[0]

    # Rough human rest pose (meters), pelvis at the origin, y up.
    joints = np.array([
        [0.00, 0.00, 0.00],    # pelvis
        [0.09, -0.08, 0.00],   # l hip
        [-0.09, -0.08, 0.00],  # r hip
        [0.00, 0.12, 0.00],    # spine1
        [0.10, -0.50, 0.00],   # l knee
        [-0.10, -0.50, 0.00],  # r knee
        [0.00, 0.25, 0.00],    # spine2
        [0.10, -0.90, 0.00],   # l ankle
        [-0.10, -0.90, 0.00],  # r ankle
        [0.00, 0.32, 0.00],    # spine3
        [0.12, -0.96, 0.10],   # l foot
        [-0.12, -0.96, 0.10],  # r foot
        [0.00, 0.45, 0.00],    # neck
        [0.07, 0.40, 0.00],    # l collar
        [-0.07, 0.40, 0.00],   # r collar
        [0.00, 0.56, 0.03],    # head
        [0.18, 0.40, 0.00],    # l shoulder
        [-0.18, 0.40, 0.00],   # r shoulder
        [0.42, 0.40, 0.00],    # l elbow
        [-0.42, 0.40, 0.00],   # r elbow
        [0.65, 0.40, 0.00],    # l wrist
        [-0.65, 0.40, 0.00],   # r wrist
        [0.72, 0.40, 0.00],    # l hand
        [-0.72, 0.40, 0.00],   # r hand
    ], dtype=np.float64)
    joints += rng.normal(0.0, 0.005, size=joints.shape)

    ring = 8
    v = j * ring
    angles = 2.0 * np.pi * np.arange(ring) / ring
    template = np.empty((v, 3))
    skin_weights = np.zeros((v, j))
    rest_regressor = np.zeros((j, v))
    radii = 0.04 + 0.02 * rng.random(j)
    for k in range(j):
        # Ring in the plane orthogonal to the bone direction (or x/z plane
        # at the root), centered on the joint so its mean is the joint.
        axis = joints[k] - joints[parents[k]] if k > 0 else np.array([0.0, 1.0, 0.0])
        axis = axis / np.linalg.norm(axis)
        helper = np.array([1.0, 0.0, 0.0])
        if abs(axis @ helper) > 0.9:
            helper = np.array([0.0, 0.0, 1.0])
        u = np.cross(axis, helper)
        u /= np.linalg.norm(u)
        w = np.cross(axis, u)
        circle = (radii[k] * (np.outer(np.cos(angles), u)
                              + np.outer(np.sin(angles), w)))
        sl = slice(k * ring, (k + 1) * ring)
        template[sl] = joints[k] + circle
        rest_regressor[k, sl] = 1.0 / ring
        skin_weights[sl, k] = 0.8
        skin_weights[sl, parents[k] if k > 0 else k] += 0.2

    blendshapes = 0.01 * rng.normal(size=(v, 3, SHAPE_COUNT))
    return BodyModelDef(
        template=template,
        blendshapes=blendshapes,
        parents=parents,
        rest_regressor=rest_regressor,
        skin_weights=skin_weights,
        joint_regressor=rest_regressor.copy(),
        root_joint=0,
        name=f"mini-{seed}",
    )


def save_model(model: BodyModelDef, path: str | Path) -> None:
    payload = {
        "schema_version": 1,
        "name": model.name,
        "root_joint": model.root_joint,
        "parents": model.parents.tolist(),
        "template": model.template.tolist(),
        "blendshapes": model.blendshapes.tolist(),
        "rest_regressor": model.rest_regressor.tolist(),
        "skin_weights": model.skin_weights.tolist(),
        "joint_regressor": model.joint_regressor.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_model(path: str | Path) -> BodyModelDef:
    payload = json.loads(Path(path).read_text())
    if payload.get("schema_version") != 1:
        raise InvalidArgumentError(
            f"unsupported body model schema: {payload.get('schema_version')}")
    return BodyModelDef(
        template=np.array(payload["template"]),
        blendshapes=np.array(payload["blendshapes"]),
        parents=np.array(payload["parents"]),
        rest_regressor=np.array(payload["rest_regressor"]),
        skin_weights=np.array(payload["skin_weights"]),
        joint_regressor=np.array(payload["joint_regressor"]),
        root_joint=int(payload.get("root_joint", 0)),
        name=str(payload.get("name", "body")),
    )


def export_obj(vertices: np.ndarray, path: str | Path) -> None:
    """Write vertices as a Wavefront OBJ point cloud."""
    lines = [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in np.asarray(vertices)]
    Path(path).write_text("\n".join(lines) + "\n")

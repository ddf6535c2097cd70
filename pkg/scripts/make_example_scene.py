#!/usr/bin/env python3
"""Regenerate docs/example_scene.json (deterministic).

A tiny two-person scene: one near large person, one far small person, with
body parameters from the deterministic mini body model. Golden outputs in
docs/golden/ are produced from this scene by the CLI.
"""

from pathlib import Path

import numpy as np

from satkit import body_model as bm
from satkit.geometry import BBox, Camera, ImageDims
from satkit.scene import PersonAnnotation, SceneFile, save_scene


def make_person(box, depth, pose_seed, model, camera):
    rng = np.random.default_rng(pose_seed)
    cx = (box.x_min + box.x_max) / 2
    cy = (box.y_min + box.y_max) / 2
    tx = (cx - camera.principal_point[0]) * depth / camera.focal
    ty = (cy - camera.principal_point[1]) * depth / camera.focal
    pose = rng.normal(0.0, 0.08, (model.joint_count, 3))
    shape = rng.normal(0.0, 0.4, 10)
    translation = np.array([tx, ty, depth])
    params = bm.SmplParams(pose=pose, shape=shape, translation=translation)
    joints = bm.regress_joints(bm.forward(params, model), model.joint_regressor)
    return PersonAnnotation(bbox=box, root_depth=depth, pose=pose,
                            shape=shape, translation=translation,
                            joints3d=joints)


def main():
    dims_hr = ImageDims(112, 56)
    camera = Camera.from_fov(dims_hr)
    model = bm.make_mini_model(0)
    persons = [
        make_person(BBox(2.0, 1.0, 52.0, 55.0), 2.5, 101, model, camera),
        make_person(BBox(70.0, 10.0, 90.0, 40.0), 6.0, 202, model, camera),
    ]
    scene = SceneFile(dims_hr=dims_hr, patch_size=14, fov_deg=60.0,
                      persons=persons,
                      body_model_ref={"kind": "mini", "seed": 0})
    out = Path(__file__).resolve().parent.parent / "docs" / "example_scene.json"
    out.parent.mkdir(exist_ok=True)
    save_scene(scene, out)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()

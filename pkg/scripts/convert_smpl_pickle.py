#!/usr/bin/env python3
"""Convert an original SMPL pickle into the JSON body-model schema.

Usage: convert_smpl_pickle.py <model.pkl> <out.json>

The pickle must provide v_template, shapedirs, J_regressor, weights and
kintree_table. Pose-dependent correctives (posedirs) are dropped: the
forward pass models blendshapes + skinning only.
"""

import sys
from pathlib import Path

import numpy as np


def _dense(x):
    return np.asarray(x.todense() if hasattr(x, "todense") else x,
                      dtype=np.float64)


def main():
    if len(sys.argv) != 3:
        print(__doc__)
        return 1
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    import pickle
    with src.open("rb") as fh:
        data = pickle.load(fh, encoding="latin1")

    from satkit.body_model import BodyModelDef, save_model

    regressor = _dense(data["J_regressor"])
    parents = np.asarray(data["kintree_table"], dtype=np.int64)[0]
    parents[0] = -1
    shapedirs = _dense(data["shapedirs"])[:, :, :10]
    model = BodyModelDef(
        template=_dense(data["v_template"]),
        blendshapes=shapedirs,
        parents=parents,
        rest_regressor=regressor,
        skin_weights=_dense(data["weights"]),
        joint_regressor=regressor.copy(),
        root_joint=0,
        name=src.stem,
    )
    save_model(model, dst)
    print(f"wrote {dst}: {model.vertex_count} vertices, "
          f"{model.joint_count} joints")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface: scale-map, tokenize, forward, eval, cost.

All inputs and outputs are JSON (plus binary PPM pixmaps and a CSV cost
report). Exit codes: 0 success, 2 parse/format errors, 3 validation errors,
4 compute errors.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import body_model as bm
from . import metrics, network, viz
from .errors import (InvalidAnnotationError, InvalidArgumentError, SatkitError,
                     SceneFormatError, SceneValidationError)
from .geometry import person_scale, project
from .match_loss import LossWeights
from .network import ArchConfig, ForwardResult, Prediction
from .scale_map import Thresholds, build_gt_scale_map, classify
from .scene import SceneFile, load_scene
from .token_engine import (assemble, partition, pipeline_cost_adaptive,
                           pipeline_cost_uniform)

logger = logging.getLogger("satkit")

CONFIG_SCHEMA_VERSION = 1
PREDICTIONS_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_VALIDATION = 3
EXIT_COMPUTE = 4


@dataclass
class RunConfig:
    """Everything a run needs beyond the scene itself."""

    thresholds: Thresholds = field(default_factory=Thresholds)
    arch: ArchConfig = field(default_factory=ArchConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    scale_bin_edges: tuple = (0.3, 0.5, 0.7)
    detection_match_px: float = 100.0
    pool_twice: bool = False
    seed: int = 0


def _section(payload: dict, key: str, cls, where: str):
    data = payload.get(key)
    if data is None:
        return cls()
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise SceneFormatError(f"{where}.{key}: unknown fields {sorted(unknown)}")
    return cls(**data)


def parse_config(payload: dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise SceneFormatError("config must be a JSON object")
    allowed = {"schema_version", "thresholds", "arch", "loss_weights",
               "scale_bin_edges", "detection_match_px", "pool_twice", "seed"}
    unknown = set(payload) - allowed
    if unknown:
        raise SceneFormatError(f"config: unknown fields {sorted(unknown)}")
    if payload.get("schema_version", CONFIG_SCHEMA_VERSION) != CONFIG_SCHEMA_VERSION:
        raise SceneFormatError(
            f"unsupported config schema_version {payload['schema_version']}")
    edges = tuple(payload.get("scale_bin_edges", (0.3, 0.5, 0.7)))
    if list(edges) != sorted(edges) or any(not 0.0 < e < 1.0 for e in edges):
        raise SceneValidationError(
            f"scale_bin_edges must be sorted and inside (0, 1), got {edges}")
    return RunConfig(
        thresholds=_section(payload, "thresholds", Thresholds, "config"),
        arch=_section(payload, "arch", ArchConfig, "config"),
        loss_weights=_section(payload, "loss_weights", LossWeights, "config"),
        scale_bin_edges=edges,
        detection_match_px=float(payload.get("detection_match_px", 100.0)),
        pool_twice=bool(payload.get("pool_twice", False)),
        seed=int(payload.get("seed", 0)),
    )


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SceneFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        cfg = parse_config(payload)
    if seed is not None:
        cfg.seed = seed
        cfg.arch = dataclasses.replace(cfg.arch, seed=seed)
    return cfg


def _dump_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    logger.info("wrote %s", path)


# ---------------------------------------------------------------------------
# Prediction file schema.


def predictions_to_json_dict(result: ForwardResult, config: RunConfig) -> dict:
    preds = []
    for i, p in enumerate(result.predictions):
        rec = p.to_json_dict()
        rec["valid"] = i in set(result.valid)
        preds.append(rec)
    payload = {
        "schema_version": PREDICTIONS_SCHEMA_VERSION,
        "seed": config.seed,
        "detection_threshold": config.thresholds.detection,
        "predictions": preds,
        "token_counts": result.layout.counts.to_json_dict(),
        "scale_map_pred": (result.scale_map_pred.to_json_dict()
                           if result.scale_map_pred else None),
    }
    return payload


def load_predictions(path: str | Path) -> tuple[list[Prediction], list[int]]:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if payload.get("schema_version") != PREDICTIONS_SCHEMA_VERSION:
        raise SceneFormatError(
            f"unsupported predictions schema_version {payload.get('schema_version')}")
    preds = [Prediction.from_json_dict(p) for p in payload["predictions"]]
    valid = [i for i, p in enumerate(payload["predictions"]) if p["valid"]]
    return preds, valid


# ---------------------------------------------------------------------------
# Core command implementations (CLI-independent, unit-testable).


def _network_weights(config: RunConfig, weights_path: Path | None):
    if weights_path is not None:
        arch, weights = network.load_weights(weights_path)
        if arch.patch_size != config.arch.patch_size:
            raise SceneValidationError(
                "weight file patch size disagrees with the config")
        return arch, weights
    return config.arch, network.init_weights(config.arch)


def _scene_grid(scene: SceneFile):
    return partition(scene.dims_lr, scene.patch_size)


def run_scale_map(scene: SceneFile, config: RunConfig, out_dir: Path,
                  stem: str, weights_path: Path | None = None) -> dict:
    grid = _scene_grid(scene)
    gt_map = build_gt_scale_map(grid, scene.persons, scene.dims_hr.longest)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    _dump_json(gt_map.to_json_dict(), out_dir / f"{stem}.scale_map.json")
    viz.write_ppm(viz.render_scale_map(gt_map, scene.dims_hr, scene.patch_size),
                  out_dir / f"{stem}.scale_map.ppm")
    outputs["gt"] = gt_map
    if weights_path is not None:
        arch, weights = _network_weights(config, weights_path)
        _check_patch_size(scene, arch)
        image_lr, _ = scene.images()
        layout = network.uniform_layout(grid)
        feats = network.embed_patches(image_lr, layout, weights)
        feats = network.encoder_forward(feats, weights, "enc_lr",
                                        arch.layers_lowres, arch.n_heads)
        pred_map = network.scale_head(feats, grid, weights)
        _dump_json(pred_map.to_json_dict(),
                   out_dir / f"{stem}.scale_map_pred.json")
        viz.write_ppm(
            viz.render_scale_map(pred_map, scene.dims_hr, scene.patch_size),
            out_dir / f"{stem}.scale_map_pred.ppm")
        outputs["pred"] = pred_map
    return outputs


def run_tokenize(scene: SceneFile, config: RunConfig, out_dir: Path,
                 stem: str, weights_path: Path | None = None,
                 use_gt_map: bool = True) -> dict:
    grid = _scene_grid(scene)
    gt_map = build_gt_scale_map(grid, scene.persons, scene.dims_hr.longest)
    if weights_path is not None and not use_gt_map:
        arch, weights = _network_weights(config, weights_path)
        _check_patch_size(scene, arch)
        image_lr, _ = scene.images()
        layout_u = network.uniform_layout(grid)
        feats = network.embed_patches(image_lr, layout_u, weights)
        feats = network.encoder_forward(feats, weights, "enc_lr",
                                        arch.layers_lowres, arch.n_heads)
        the_map = network.scale_head(feats, grid, weights)
    else:
        the_map = gt_map
    class_grid = classify(the_map, config.thresholds)
    layout = assemble(grid, class_grid, pool_twice=config.pool_twice)
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(layout.to_json_dict(), out_dir / f"{stem}.tokens.json")
    viz.write_ppm(viz.render_token_layout(layout, scene.dims_hr, the_map),
                  out_dir / f"{stem}.tokens.ppm")
    return {"layout": layout, "map": the_map}


def _check_patch_size(scene: SceneFile, arch: ArchConfig) -> None:
    if scene.patch_size != arch.patch_size:
        raise SceneValidationError(
            f"scene patch_size {scene.patch_size} disagrees with "
            f"architecture patch_size {arch.patch_size}")


def run_forward(scene: SceneFile, config: RunConfig, out_dir: Path, stem: str,
                weights_path: Path | None = None,
                use_gt_map: bool = False) -> ForwardResult:
    arch, weights = _network_weights(config, weights_path)
    _check_patch_size(scene, arch)
    image_lr, image_hr = scene.images()
    result = network.full_forward(
        image_lr, image_hr, arch, weights, config.thresholds,
        persons=scene.persons, use_gt_map=use_gt_map,
        pool_twice=config.pool_twice)
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(predictions_to_json_dict(result, config),
               out_dir / f"{stem}.predictions.json")
    return result


def _enrich(pred: Prediction, model: bm.BodyModelDef, camera, dims_hr):
    """Mesh, joints, projections, and normalized box for one prediction."""
    params = bm.SmplParams(pose=pred.pose, shape=pred.shape,
                           translation=pred.translation)
    verts = bm.forward(params, model)
    joints = bm.regress_joints(verts, model.joint_regressor)
    if np.all(joints[:, 2] > 0):
        j2d = np.array([project(j, camera) for j in joints])
    else:
        j2d = None
    return verts, joints, j2d


def _gt_arrays(scene: SceneFile, model: bm.BodyModelDef, camera):
    verts_all, j3d_all, j2d_all, scales = [], [], [], []
    for idx, person in enumerate(scene.persons):
        params = person.params()
        verts = bm.forward(params, model)
        joints = (person.joints3d if person.joints3d is not None
                  else bm.regress_joints(verts, model.joint_regressor))
        if joints.shape[0] != model.output_joint_count:
            raise SceneValidationError(
                f"persons[{idx}].joints3d: {joints.shape[0]} joints, model "
                f"regresses {model.output_joint_count}")
        if not np.all(joints[:, 2] > 0):
            raise SceneValidationError(
                f"persons[{idx}]: ground-truth joints behind the camera")
        j2d = np.array([project(j, camera) for j in joints])
        verts_all.append(verts)
        j3d_all.append(joints)
        j2d_all.append(j2d)
        scales.append(person_scale(person.bbox, scene.dims_hr.longest))
    return verts_all, j3d_all, j2d_all, scales


def evaluate_scene(scene: SceneFile, predictions: list[Prediction],
                   valid: list[int], config: RunConfig,
                   model: bm.BodyModelDef | None = None) -> metrics.EvalReport:
    """Detection + regression metrics of a prediction set against a scene.

    Detection matches by mean projected-joint distance; pairs closer than
    ``config.detection_match_px`` are true positives, and regression
    metrics are averaged over those pairs.
    """
    if model is None:
        model = scene.resolve_body_model()
    camera = scene.camera()
    gt_verts, gt_j3d, gt_j2d, gt_scales = _gt_arrays(scene, model, camera)

    kept = [predictions[i] for i in valid]
    pred_verts, pred_j3d, pred_j2d = [], [], []
    for pred in kept:
        verts, joints, j2d = _enrich(pred, model, camera, scene.dims_hr)
        pred_verts.append(verts)
        pred_j3d.append(joints)
        pred_j2d.append(j2d)

    pairs = metrics.match_by_joint_distance(pred_j2d, gt_j2d)
    tp_pairs = [(i, j) for i, j, dist in pairs
                if dist < config.detection_match_px]
    tp = len(tp_pairs)
    fp = len(kept) - tp
    fn = len(scene.persons) - tp
    precision = tp / len(kept) if kept else 0.0
    recall = tp / len(scene.persons) if scene.persons else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)

    report = metrics.EvalReport(precision=precision, recall=recall, f1=f1,
                                tp=tp, fp=fp, fn=fn)
    if tp_pairs:
        root = model.root_joint
        mves, mpjpes, pa_mves, pa_mpjpes, bins_err, bins_scale = [], [], [], [], [], []
        correct_joints = 0
        total_joints = 0
        for i, j in tp_pairs:
            pr, gr = pred_j3d[i][root], gt_j3d[j][root]
            mves.append(metrics.mve(pred_verts[i], gt_verts[j], pr, gr))
            mpjpes.append(metrics.mpjpe(pred_j3d[i], gt_j3d[j], root))
            pa_mves.append(metrics.pa_mve(pred_verts[i], gt_verts[j]))
            pa_mpjpes.append(metrics.pa_mpjpe(pred_j3d[i], gt_j3d[j]))
            aligned = metrics.root_aligned(pred_j3d[i], pr, gr)
            err_mm = np.linalg.norm(aligned - gt_j3d[j], axis=1) * metrics.MM
            correct_joints += int(np.sum(err_mm < report.pck_threshold_mm))
            total_joints += err_mm.size
            bins_err.append(mves[-1])
            bins_scale.append(gt_scales[j])
        report.mve = float(np.mean(mves))
        report.mpjpe = float(np.mean(mpjpes))
        report.pa_mve = float(np.mean(pa_mves))
        report.pa_mpjpe = float(np.mean(pa_mpjpes))
        report.pck = correct_joints / total_joints
        report.scale_bins = metrics.scale_binned_errors(
            np.array(bins_err), np.array(bins_scale), config.scale_bin_edges)
        if f1 > 0:
            report.nmve, report.nmje = metrics.normalized_errors(
                report.mve, report.mpjpe, f1)
    return report


def run_eval(scene: SceneFile, predictions_path: Path, config: RunConfig,
             out_dir: Path, stem: str) -> metrics.EvalReport:
    predictions, valid = load_predictions(predictions_path)
    report = evaluate_scene(scene, predictions, valid, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(report.to_json_dict(), out_dir / f"{stem}.eval.json")
    (out_dir / f"{stem}.eval.txt").write_text(report.to_text())
    return report


COST_SCHEMES = ("uniform_lowres", "uniform_highres", "scale_adaptive")
COST_COLUMNS = ("scene", "scheme", "tokens_total", "tokens_highres",
                "tokens_lowres", "tokens_background", "macs")


def cost_rows_for_scene(scene: SceneFile, config: RunConfig,
                        name: str) -> list[dict]:
    """Modeled encoder multiply-adds for the three tokenization schemes."""
    grid = _scene_grid(scene)
    gt_map = build_gt_scale_map(grid, scene.persons, scene.dims_hr.longest)
    layout = assemble(grid, classify(gt_map, config.thresholds),
                      pool_twice=config.pool_twice)
    cm = config.arch.cost_model()
    c = layout.counts
    return [
        {"scene": name, "scheme": "uniform_lowres",
         "tokens_total": c.lowres, "tokens_highres": "",
         "tokens_lowres": c.lowres, "tokens_background": "",
         "macs": pipeline_cost_uniform(c.lowres, cm)},
        {"scene": name, "scheme": "uniform_highres",
         "tokens_total": 4 * c.lowres, "tokens_highres": 4 * c.lowres,
         "tokens_lowres": "", "tokens_background": "",
         "macs": pipeline_cost_uniform(4 * c.lowres, cm)},
        {"scene": name, "scheme": "scale_adaptive",
         "tokens_total": c.total, "tokens_highres": c.highres,
         "tokens_lowres": c.large, "tokens_background": c.background_out,
         "macs": pipeline_cost_adaptive(c, cm)},
    ]


def _cost_worker(args) -> list[dict]:
    path_str, config_payload = args
    config = parse_config(config_payload) if config_payload else RunConfig()
    scene = load_scene(path_str)
    return cost_rows_for_scene(scene, config, Path(path_str).name)


def run_cost(scene_paths: list[Path], config: RunConfig,
             config_payload: dict | None, out_dir: Path,
             jobs: int = 1) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    args = [(str(p), config_payload) for p in scene_paths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            row_groups = list(pool.map(_cost_worker, args))
    else:
        row_groups = [_cost_worker(a) for a in args]
    out_path = out_dir / "cost.csv"
    with out_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COST_COLUMNS)
        writer.writeheader()
        for rows in row_groups:
            writer.writerows(rows)
    logger.info("wrote %s", out_path)
    return out_path


# ---------------------------------------------------------------------------
# Click wiring.


def _common_options(fn):
    fn = click.option("--scene", "scene_path", required=True,
                      type=click.Path(path_type=Path, exists=True))(fn)
    fn = click.option("--config", "config_path", default=None,
                      type=click.Path(path_type=Path, exists=True))(fn)
    fn = click.option("--weights", "weights_path", default=None,
                      type=click.Path(path_type=Path, exists=True))(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override the config seed.")(fn)
    fn = click.option("--out", "out_dir", default=Path("."),
                      type=click.Path(path_type=Path))(fn)
    fn = click.option("--jobs", type=int, default=1,
                      help="Parallel scene workers (cost only).")(fn)
    return fn


@click.group()
def cli():
    """Scale-adaptive tokenization toolkit."""


@cli.command("scale-map")
@_common_options
def cmd_scale_map(scene_path, config_path, weights_path, seed, out_dir, jobs):
    """Write the ground-truth (and optionally predicted) scale map."""
    config = load_config(config_path, seed)
    scene = load_scene(scene_path)
    run_scale_map(scene, config, out_dir, scene_path.stem, weights_path)


@cli.command("tokenize")
@_common_options
@click.option("--gt-scale-map", is_flag=True, default=False,
              help="Classify from the ground-truth map even with weights.")
def cmd_tokenize(scene_path, config_path, weights_path, seed, out_dir, jobs,
                 gt_scale_map):
    """Write the token layout, count summary, and pixmap."""
    config = load_config(config_path, seed)
    scene = load_scene(scene_path)
    result = run_tokenize(scene, config, out_dir, scene_path.stem,
                          weights_path,
                          use_gt_map=gt_scale_map or weights_path is None)
    counts = result["layout"].counts.to_json_dict()
    click.echo(json.dumps(counts, sort_keys=True))


@cli.command("forward")
@_common_options
@click.option("--gt-scale-map", is_flag=True, default=False,
              help="Classify from the ground-truth map instead of the head.")
def cmd_forward(scene_path, config_path, weights_path, seed, out_dir, jobs,
                gt_scale_map):
    """Run the full forward pass and write predictions."""
    config = load_config(config_path, seed)
    scene = load_scene(scene_path)
    result = run_forward(scene, config, out_dir, scene_path.stem,
                         weights_path, use_gt_map=gt_scale_map)
    click.echo(f"predictions: {len(result.predictions)} "
               f"(valid: {len(result.valid)})")


@cli.command("eval")
@_common_options
@click.option("--predictions", "predictions_path", required=True,
              type=click.Path(path_type=Path, exists=True))
def cmd_eval(scene_path, config_path, weights_path, seed, out_dir, jobs,
             predictions_path):
    """Evaluate a predictions file against a scene's ground truth."""
    config = load_config(config_path, seed)
    scene = load_scene(scene_path)
    report = run_eval(scene, predictions_path, config, out_dir,
                      scene_path.stem)
    click.echo(report.to_text())


@cli.command("cost")
@_common_options
def cmd_cost(scene_path, config_path, weights_path, seed, out_dir, jobs):
    """Compare modeled compute of uniform vs scale-adaptive tokenization.

    --scene may be a single scene file or a directory of scene JSONs.
    """
    config = load_config(config_path, seed)
    config_payload = (json.loads(Path(config_path).read_text())
                      if config_path else None)
    if scene_path.is_dir():
        paths = sorted(scene_path.glob("*.json"))
        if not paths:
            raise SceneValidationError(f"no scene files in {scene_path}")
    else:
        paths = [scene_path]
    out_path = run_cost(paths, config, config_payload, out_dir, jobs)
    click.echo(str(out_path))


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SATKIT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Abort:
        return EXIT_COMPUTE
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        click.echo(f"usage error: {exc}", err=True)
        return EXIT_FORMAT
    except SceneFormatError as exc:
        click.echo(f"format error: {exc}", err=True)
        return EXIT_FORMAT
    except (SceneValidationError, InvalidAnnotationError,
            InvalidArgumentError) as exc:
        click.echo(f"validation error: {exc}", err=True)
        return EXIT_VALIDATION
    except SatkitError as exc:
        click.echo(f"compute error: {exc}", err=True)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())

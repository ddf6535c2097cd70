"""Evaluation stack: vertex/joint errors, Procrustes alignment, detection.

Errors are computed in meters internally and reported in millimeters.
Joint and vertex errors are root-aligned: predictions are shifted so the
regressed root joint coincides with the ground-truth root before averaging
Euclidean distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (DegenerateGeometryError, InvalidArgumentError,
                     UndefinedMetricError)

MM = 1000.0


def _paired(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise InvalidArgumentError(
            f"point sets must both be (N, 3), got {pred.shape} vs {gt.shape}")
    return pred, gt


def root_aligned(points: np.ndarray, pred_root: np.ndarray,
                 gt_root: np.ndarray) -> np.ndarray:
    """Shift a point set so the prediction's root matches the GT root."""
    # Single delta keeps the no-op case exact (identical roots add zero).
    return np.asarray(points, dtype=np.float64) + (gt_root - pred_root)


def mpjpe(pred_joints: np.ndarray, gt_joints: np.ndarray,
          root_joint: int = 0) -> float:
    """Mean per-joint position error in millimeters, root-aligned."""
    pred, gt = _paired(pred_joints, gt_joints)
    aligned = root_aligned(pred, pred[root_joint], gt[root_joint])
    return float(np.mean(np.linalg.norm(aligned - gt, axis=1))) * MM


def mve(pred_vertices: np.ndarray, gt_vertices: np.ndarray,
        pred_root: np.ndarray, gt_root: np.ndarray) -> float:
    """Mean per-vertex error in millimeters after root alignment.

    Roots are the regressed root-joint positions of the respective meshes.
    """
    pred, gt = _paired(pred_vertices, gt_vertices)
    aligned = root_aligned(pred, pred_root, gt_root)
    return float(np.mean(np.linalg.norm(aligned - gt, axis=1))) * MM


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Least-squares similarity alignment (rotation, scale, translation).

    Returns pred mapped by the optimal similarity transform onto gt.
    Requires at least 3 non-collinear points.
    """
    pred, gt = _paired(pred, gt)
    if pred.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 points to align")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    pc = pred - mu_p
    gc = gt - mu_g
    cov = gc.T @ pc / pred.shape[0]
    u, s, vt = np.linalg.svd(cov)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateGeometryError("points are (near-)collinear")
    sign = np.sign(np.linalg.det(u @ vt))
    d = np.array([1.0, 1.0, sign])
    rot = u @ np.diag(d) @ vt
    var_p = float(np.mean(np.sum(pc ** 2, axis=1)))
    if var_p <= 0:
        raise DegenerateGeometryError("prediction cloud has zero variance")
    scale = float(np.sum(s * d)) / var_p
    return scale * pc @ rot.T + mu_g


def pa_mpjpe(pred_joints: np.ndarray, gt_joints: np.ndarray) -> float:
    """Mean joint error (mm) after Procrustes alignment."""
    aligned = procrustes_align(pred_joints, gt_joints)
    return float(np.mean(np.linalg.norm(aligned - gt_joints, axis=1))) * MM


def pa_mve(pred_vertices: np.ndarray, gt_vertices: np.ndarray) -> float:
    """Mean vertex error (mm) after Procrustes alignment."""
    aligned = procrustes_align(pred_vertices, gt_vertices)
    return float(np.mean(np.linalg.norm(aligned - gt_vertices, axis=1))) * MM


def pck(pred_joints: np.ndarray, gt_joints: np.ndarray,
        threshold_mm: float = 150.0) -> float:
    """Fraction of joints with position error strictly below the threshold."""
    pred, gt = _paired(pred_joints, gt_joints)
    err = np.linalg.norm(pred - gt, axis=1) * MM
    return float(np.mean(err < threshold_mm))


def match_by_joint_distance(pred_j2d: list, gt_j2d: list) -> list:
    """Minimum-total-distance pairing of predictions to ground truth.

    Distance between a pair is the mean 2D joint distance; ``pred_j2d``
    entries may be None (failed projection), which pair at a prohibitive
    distance. Returns ``(pred_index, gt_index, distance)`` triples.
    """
    n, m = len(pred_j2d), len(gt_j2d)
    if not n or not m:
        return []
    dist = np.full((n, m), 1e12)
    for i, pj in enumerate(pred_j2d):
        if pj is None:
            continue
        for j, gj in enumerate(gt_j2d):
            dist[i, j] = float(np.mean(np.linalg.norm(pj - gj, axis=1)))
    rows, cols = linear_sum_assignment(dist)
    return [(int(i), int(j), float(dist[i, j])) for i, j in zip(rows, cols)]


def detection_prf(pred_j2d: list, gt_j2d: list, match_px: float):
    """Detection precision/recall/F1 from 2D joint proximity.

    Candidates pair via :func:`match_by_joint_distance`; a pair is a true
    positive when its distance is below ``match_px`` pixels.

    Returns ``(precision, recall, f1, tp, fp, fn)``.
    """
    n, m = len(pred_j2d), len(gt_j2d)
    pairs = match_by_joint_distance(pred_j2d, gt_j2d)
    tp = sum(1 for _, _, dist in pairs if dist < match_px)
    fp = n - tp
    fn = m - tp
    precision = tp / n if n else 0.0
    recall = tp / m if m else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return precision, recall, f1, tp, fp, fn


def normalized_errors(mve_mm: float, mpjpe_mm: float,
                      f1: float) -> tuple[float, float]:
    """Fold detection quality into regression error: divide by F1."""
    if f1 <= 0:
        raise UndefinedMetricError("normalized errors undefined at F1 = 0")
    return mve_mm / f1, mpjpe_mm / f1


@dataclass(frozen=True)
class ScaleBin:
    lo: float
    hi: float
    count: int
    mean_error: float | None  # None when the bin is empty, never 0

    def to_json_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "count": self.count,
                "mean_error": self.mean_error}


def scale_binned_errors(errors: np.ndarray, scales: np.ndarray,
                        edges=(0.3, 0.5, 0.7)) -> list[ScaleBin]:
    """Mean error per person-scale range; empty bins are absent, not zero.

    Bins are [0, e1), [e1, e2), ..., [ek, 1]; scales are clamped to [0, 1]
    upstream by construction.
    """
    errors = np.asarray(errors, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if errors.shape != scales.shape:
        raise InvalidArgumentError("errors and scales must align")
    bounds = [0.0, *edges, 1.0]
    bins = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi >= 1.0:
            mask = (scales >= lo)  # last bin is closed above
        else:
            mask = (scales >= lo) & (scales < hi)
        count = int(np.sum(mask))
        bins.append(ScaleBin(lo=lo, hi=hi, count=count,
                             mean_error=float(np.mean(errors[mask]))
                             if count else None))
    return bins


@dataclass
class EvalReport:
    """Aggregated evaluation of one scene (or a merged set of scenes)."""

    mve: float | None = None
    mpjpe: float | None = None
    pa_mve: float | None = None
    pa_mpjpe: float | None = None
    nmve: float | None = None
    nmje: float | None = None
    pck: float | None = None
    pck_threshold_mm: float = 150.0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    scale_bins: list[ScaleBin] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        payload = {k: getattr(self, k) for k in (
            "mve", "mpjpe", "pa_mve", "pa_mpjpe", "nmve", "nmje",
            "pck", "pck_threshold_mm", "precision", "recall", "f1",
            "tp", "fp", "fn")}
        payload["scale_bins"] = [b.to_json_dict() for b in self.scale_bins]
        return payload

    def to_text(self) -> str:
        def fmt(v, unit=""):
            return "   absent" if v is None else f"{v:9.3f}{unit}"

        lines = ["metric          value",
                 "-" * 30,
                 f"MVE        {fmt(self.mve, ' mm')}",
                 f"MPJPE      {fmt(self.mpjpe, ' mm')}",
                 f"PA-MVE     {fmt(self.pa_mve, ' mm')}",
                 f"PA-MPJPE   {fmt(self.pa_mpjpe, ' mm')}",
                 f"NMVE       {fmt(self.nmve, ' mm')}",
                 f"NMJE       {fmt(self.nmje, ' mm')}",
                 f"PCK@{self.pck_threshold_mm:.0f}mm {fmt(self.pck)}",
                 f"precision  {fmt(self.precision)}",
                 f"recall     {fmt(self.recall)}",
                 f"F1         {fmt(self.f1)}",
                 f"TP/FP/FN   {self.tp:3d} /{self.fp:3d} /{self.fn:3d}",
                 "",
                 "scale range     count  MVE (mm)"]
        for b in self.scale_bins:
            hi = f"{b.hi * 100:.0f}%" if b.hi < 1.0 else "100%"
            err = "absent" if b.mean_error is None else f"{b.mean_error:8.3f}"
            lines.append(f"{b.lo * 100:3.0f}% - {hi:5s} {b.count:8d}  {err}")
        return "\n".join(lines) + "\n"

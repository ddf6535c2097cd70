"""Set matching and the full training-loss stack with analytic gradients.

All losses are plain double-precision functions of prediction variables so
their gradients can be checked against central finite differences. The
assignment step is backed by scipy's exact solver; tests verify it against
factorial enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InfeasibleMatchError, InvalidArgumentError
from .geometry import BBox, giou
from .scale_map import ScaleMap

PROB_EPS = 1e-7
# Cost assigned to a candidate pair whose prediction cannot be projected.
INVALID_PROJECTION_COST = 1e6


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights of the eight loss terms."""

    map: float = 4.0
    depth: float = 0.5
    pose: float = 5.0
    shape: float = 3.0
    j3d: float = 8.0
    j2d: float = 40.0
    box: float = 2.0
    det: float = 4.0

    def __post_init__(self):
        for name in ("map", "depth", "pose", "shape", "j3d", "j2d", "box", "det"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"loss weight {name} must be >= 0")


# ---------------------------------------------------------------------------
# Elementary losses and their gradients.


def focal_loss(p: float, y: int, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Down-weighted cross-entropy for binary target y; p is clamped."""
    p = min(max(float(p), PROB_EPS), 1.0 - PROB_EPS)
    if y:
        return -alpha * (1.0 - p) ** gamma * np.log(p)
    return -(1.0 - alpha) * p ** gamma * np.log(1.0 - p)


def focal_loss_grad(p: float, y: int, alpha: float = 0.25,
                    gamma: float = 2.0) -> float:
    """d(focal_loss)/dp inside the clamp interval."""
    p = min(max(float(p), PROB_EPS), 1.0 - PROB_EPS)
    if y:
        return alpha * (gamma * (1.0 - p) ** (gamma - 1.0) * np.log(p)
                        - (1.0 - p) ** gamma / p)
    return (1.0 - alpha) * (gamma * p ** (gamma - 1.0) * np.log(1.0 - p)
                            - p ** gamma / (1.0 - p)) * -1.0


def l1_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute difference; shared kernel for pose/shape/joint terms."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return float(np.mean(np.abs(pred - gt)))


def l1_loss_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Gradient of :func:`l1_loss` w.r.t. pred, valid away from kinks."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return np.sign(pred - gt) / pred.size


def depth_loss(d: float, d_gt: float, focal: float, focal_gt: float) -> float:
    """Focal-normalized inverse-depth discrepancy |1/d_gt - focal/(focal_gt*d)|."""
    if min(d, d_gt, focal, focal_gt) <= 0:
        raise InvalidArgumentError(
            f"depth loss needs positive inputs, got d={d}, d_gt={d_gt}, "
            f"focal={focal}, focal_gt={focal_gt}")
    return abs(1.0 / d_gt - focal / (focal_gt * d))


def depth_loss_grad(d: float, d_gt: float, focal: float, focal_gt: float) -> float:
    """d(depth_loss)/dd, valid away from the zero of the residual."""
    if min(d, d_gt, focal, focal_gt) <= 0:
        raise InvalidArgumentError("depth loss needs positive inputs")
    residual = 1.0 / d_gt - focal / (focal_gt * d)
    return float(np.sign(residual)) * focal / (focal_gt * d * d)


def _giou_grad_pred(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """GIoU and its gradient w.r.t. pred corners (x0, y0, x1, y1)."""
    ax0, ay0, ax1, ay1 = pred
    bx0, by0, bx1, by1 = gt
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    d_area = np.array([-(ay1 - ay0), -(ax1 - ax0), (ay1 - ay0), (ax1 - ax0)])

    wi = min(ax1, bx1) - max(ax0, bx0)
    hi = min(ay1, by1) - max(ay0, by0)
    if wi > 0 and hi > 0:
        inter = wi * hi
        d_wi = np.array([-1.0 if ax0 > bx0 else 0.0, 0.0,
                         1.0 if ax1 < bx1 else 0.0, 0.0])
        d_hi = np.array([0.0, -1.0 if ay0 > by0 else 0.0,
                         0.0, 1.0 if ay1 < by1 else 0.0])
        d_inter = d_wi * hi + d_hi * wi
    else:
        inter = 0.0
        d_inter = np.zeros(4)

    union = area_a + area_b - inter
    d_union = d_area - d_inter

    wc = max(ax1, bx1) - min(ax0, bx0)
    hc = max(ay1, by1) - min(ay0, by0)
    enclosure = wc * hc
    d_wc = np.array([-1.0 if ax0 < bx0 else 0.0, 0.0,
                     1.0 if ax1 > bx1 else 0.0, 0.0])
    d_hc = np.array([0.0, -1.0 if ay0 < by0 else 0.0,
                     0.0, 1.0 if ay1 > by1 else 0.0])
    d_enc = d_wc * hc + d_hc * wc

    iou_val = inter / union
    d_iou = (d_inter * union - inter * d_union) / union ** 2
    # giou = iou - 1 + union / enclosure
    giou_val = iou_val - 1.0 + union / enclosure
    d_giou = d_iou + (d_union * enclosure - union * d_enc) / enclosure ** 2
    return giou_val, d_giou


def box_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean corner L1 plus the GIoU gap (1 - giou); boxes are corner form."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    g = giou(BBox(*pred), BBox(*gt))
    return float(np.mean(np.abs(pred - gt)) + (1.0 - g))


def box_loss_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Gradient of :func:`box_loss` w.r.t. pred corners, away from kinks."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _, d_giou = _giou_grad_pred(pred, gt)
    return np.sign(pred - gt) / 4.0 - d_giou


def scale_map_loss(pred: ScaleMap, gt: ScaleMap,
                   alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Mean focal over all patches plus mean scale L1 over person patches."""
    if (pred.rows, pred.cols) != (gt.rows, gt.cols):
        raise InvalidArgumentError(
            f"scale map grids disagree: {(pred.rows, pred.cols)} vs "
            f"{(gt.rows, gt.cols)}")
    p = np.clip(pred.confidence, PROB_EPS, 1.0 - PROB_EPS)
    y = gt.confidence
    focal = np.where(y >= 0.5,
                     -alpha * (1.0 - p) ** gamma * np.log(p),
                     -(1.0 - alpha) * p ** gamma * np.log(1.0 - p))
    total = float(np.mean(focal))
    person = y >= 0.5
    if np.any(person):
        total += float(np.mean(np.abs(pred.scale[person] - gt.scale[person])))
    return total


# ---------------------------------------------------------------------------
# Matching.


@dataclass(frozen=True)
class MatchResult:
    """Injective assignment of ground-truth rows to prediction indices."""

    gt_to_pred: tuple[int, ...]
    total_cost: float

    def __post_init__(self):
        if len(set(self.gt_to_pred)) != len(self.gt_to_pred):
            raise InvalidArgumentError("assignment must be injective")


def hungarian(cost: np.ndarray) -> MatchResult:
    """Minimum-total-cost injective assignment of columns (GT) to rows.

    ``cost`` is (n_predictions, m_targets) with m <= n; entry (i, j) is the
    cost of assigning prediction i to target j.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InvalidArgumentError("cost must be a matrix")
    n, m = cost.shape
    if m == 0:
        return MatchResult(gt_to_pred=(), total_cost=0.0)
    if m > n:
        raise InfeasibleMatchError(
            f"{m} targets cannot be injectively assigned to {n} predictions")
    if not np.all(np.isfinite(cost)):
        raise InvalidArgumentError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost.T)  # rows: GT, cols: predictions
    gt_to_pred = [0] * m
    for g, p in zip(rows, cols):
        gt_to_pred[g] = int(p)
    return MatchResult(gt_to_pred=tuple(gt_to_pred),
                       total_cost=float(cost.T[rows, cols].sum()))


def matching_cost_matrix(pred_boxes: np.ndarray, pred_conf: np.ndarray,
                         pred_j2d: list, gt_boxes: np.ndarray,
                         gt_j2d: np.ndarray,
                         weights: LossWeights) -> np.ndarray:
    """Pairwise matching cost: weighted box + detection + 2D joint terms.

    Boxes are corner form in normalized image coordinates; 2D joints share
    one normalized frame. The detection term is the negated confidence. A
    prediction without a valid projection (``pred_j2d[i] is None``) pays
    ``INVALID_PROJECTION_COST`` in place of its joint term.
    """
    n, m = len(pred_boxes), len(gt_boxes)
    cost = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        det_term = weights.det * (-float(pred_conf[i]))
        for j in range(m):
            box_term = weights.box * box_loss(pred_boxes[i], gt_boxes[j])
            if pred_j2d[i] is None:
                j2d_term = weights.j2d * INVALID_PROJECTION_COST
            else:
                j2d_term = weights.j2d * l1_loss(pred_j2d[i], gt_j2d[j])
            cost[i, j] = box_term + det_term + j2d_term
    return cost


# ---------------------------------------------------------------------------
# Full loss over a scene.


@dataclass
class PredictionBundle:
    """Per-query arrays an assembled loss needs.

    ``boxes`` are corner form normalized; ``joints2d`` entries are (J, 2) in
    the same normalized frame or None when the projection is invalid;
    ``root_depth`` is the z of the regressed root joint.
    """

    pose: np.ndarray          # (n, J, 3)
    shape: np.ndarray         # (n, B)
    boxes: np.ndarray         # (n, 4)
    confidence: np.ndarray    # (n,)
    joints3d: np.ndarray      # (n, J_out, 3)
    joints2d: list            # n entries of (J_out, 2) or None
    root_depth: np.ndarray    # (n,)


@dataclass
class GroundTruthBundle:
    pose: np.ndarray          # (m, J, 3)
    shape: np.ndarray         # (m, B)
    boxes: np.ndarray         # (m, 4)
    joints3d: np.ndarray      # (m, J_out, 3)
    joints2d: np.ndarray      # (m, J_out, 2)
    depth: np.ndarray         # (m,)


@dataclass
class LossBreakdown:
    total: float
    terms: dict = field(default_factory=dict)
    per_person: list = field(default_factory=list)
    match: MatchResult | None = None

    def to_json_dict(self) -> dict:
        return {"total": self.total, "terms": dict(self.terms),
                "per_person": list(self.per_person),
                "match": list(self.match.gt_to_pred) if self.match else None}


def total_loss(pred: PredictionBundle, gt: GroundTruthBundle,
               pred_map: ScaleMap | None, gt_map: ScaleMap | None,
               weights: LossWeights, focal_px: float, focal_gt_px: float,
               match: MatchResult | None = None) -> LossBreakdown:
    """Weighted sum of all loss terms over Hungarian-matched pairs.

    Matched-pair terms are averaged over matched persons; the detection term
    runs over every query, with unmatched queries supervised toward
    background.
    """
    n = len(pred.confidence)
    m = len(gt.depth)
    if match is None:
        cost = matching_cost_matrix(pred.boxes, pred.confidence, pred.joints2d,
                                    gt.boxes, gt.joints2d, weights)
        match = hungarian(cost)

    terms = {"map": 0.0, "depth": 0.0, "pose": 0.0, "shape": 0.0,
             "j3d": 0.0, "j2d": 0.0, "box": 0.0, "det": 0.0}
    if pred_map is not None and gt_map is not None:
        terms["map"] = scale_map_loss(pred_map, gt_map)

    matched = set(match.gt_to_pred)
    per_person = []
    for g_idx, p_idx in enumerate(match.gt_to_pred):
        if pred.joints2d[p_idx] is None:
            j2d = INVALID_PROJECTION_COST
        else:
            j2d = l1_loss(pred.joints2d[p_idx], gt.joints2d[g_idx])
        entry = {
            "gt": g_idx,
            "pred": p_idx,
            "depth": depth_loss(float(pred.root_depth[p_idx]),
                                float(gt.depth[g_idx]), focal_px, focal_gt_px),
            "pose": l1_loss(pred.pose[p_idx], gt.pose[g_idx]),
            "shape": l1_loss(pred.shape[p_idx], gt.shape[g_idx]),
            "j3d": l1_loss(pred.joints3d[p_idx], gt.joints3d[g_idx]),
            "j2d": j2d,
            "box": box_loss(pred.boxes[p_idx], gt.boxes[g_idx]),
        }
        per_person.append(entry)
        for key in ("depth", "pose", "shape", "j3d", "j2d", "box"):
            terms[key] += entry[key] / m

    det = 0.0
    for i in range(n):
        det += focal_loss(float(pred.confidence[i]), int(i in matched))
    terms["det"] = det / n if n else 0.0

    total = sum(getattr(weights, key) * value for key, value in terms.items())
    return LossBreakdown(total=total, terms=terms, per_person=per_person,
                         match=match)


# ---------------------------------------------------------------------------
# Gradient verification.


def grad_check(fn, grad_fn, point: np.ndarray, step: float = 1e-5) -> float:
    """Max relative deviation between analytic and central-difference grads.

    ``fn`` maps a flat float64 vector to a scalar; ``grad_fn`` returns the
    analytic gradient at the same point. Relative deviation per coordinate
    is |a - n| / max(1, |a|, |n|).
    """
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(grad_fn(point), dtype=np.float64).ravel()
    numeric = np.empty_like(analytic)
    flat = point.ravel()
    for k in range(flat.size):
        shifted = flat.copy()
        shifted[k] += step
        hi = fn(shifted.reshape(point.shape))
        shifted[k] -= 2.0 * step
        lo = fn(shifted.reshape(point.shape))
        numeric[k] = (hi - lo) / (2.0 * step)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))

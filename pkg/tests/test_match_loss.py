"""Losses, matching, and gradient verification."""

import math

import numpy as np
import pytest

from satkit.errors import InfeasibleMatchError, InvalidArgumentError
from satkit.match_loss import (GroundTruthBundle, LossWeights,
                               PredictionBundle, box_loss, box_loss_grad,
                               depth_loss, depth_loss_grad, focal_loss,
                               focal_loss_grad, grad_check, hungarian,
                               l1_loss, l1_loss_grad, matching_cost_matrix,
                               scale_map_loss, total_loss)
from satkit.scale_map import ScaleMap

from helpers import oracle_assignment


class TestFocalLoss:
    def test_perfect_prediction_is_zero(self):
        assert focal_loss(1.0, 1) == pytest.approx(0.0, abs=1e-18)

    def test_reduces_to_cross_entropy_at_gamma_zero(self):
        assert focal_loss(0.5, 1, alpha=1.0, gamma=0.0) == pytest.approx(
            math.log(2), rel=1e-12)

    def test_default_parameters_value(self):
        assert focal_loss(0.5, 1, alpha=0.25, gamma=2.0) == pytest.approx(
            0.04332169878499658, rel=1e-12)

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            p = rng.random()
            assert focal_loss(p, int(rng.integers(0, 2))) >= 0.0

    def test_out_of_range_probability_clamped(self):
        assert np.isfinite(focal_loss(0.0, 1))
        assert np.isfinite(focal_loss(1.0, 0))


class TestL1Loss:
    def test_zero_at_equality(self):
        x = np.arange(12.0).reshape(4, 3)
        assert l1_loss(x, x) == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 5, 3))
        assert l1_loss(a, b) == pytest.approx(l1_loss(b, a), rel=1e-15)

    def test_three_joint_case_frozen_oracle(self):
        pred = np.array([[0.1, 0.2, 0.3], [1.0, -1.0, 0.5], [2.0, 0.0, -0.25]])
        gt = np.array([[0.0, 0.0, 0.0], [1.5, -0.5, 0.5], [2.0, 1.0, -1.0]])
        assert l1_loss(pred, gt) == pytest.approx(0.37222222222222223,
                                                  rel=1e-14)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            l1_loss(np.zeros(3), np.zeros(4))


class TestDepthLoss:
    def test_zero_at_formula_root(self):
        f, f_gt, d_gt = 800.0, 500.0, 3.0
        d = f * d_gt / f_gt
        assert depth_loss(d, d_gt, f, f_gt) <= 1e-12

    def test_direct_evaluation(self):
        assert depth_loss(4.0, 2.0, 700.0, 700.0) == pytest.approx(0.25,
                                                                   rel=1e-12)

    def test_focal_ratio_invariance(self):
        base = depth_loss(3.0, 2.0, 600.0, 450.0)
        assert depth_loss(3.0, 2.0, 1200.0, 900.0) == pytest.approx(
            base, rel=1e-12)

    def test_rejects_non_positive(self):
        with pytest.raises(InvalidArgumentError):
            depth_loss(-1.0, 2.0, 600.0, 600.0)
        with pytest.raises(InvalidArgumentError):
            depth_loss(1.0, 2.0, 0.0, 600.0)


class TestScaleMapLoss:
    def test_zero_scale_term_at_equality(self):
        gt = ScaleMap(confidence=np.array([[1.0, 0.0], [0.0, 1.0]]),
                      scale=np.array([[0.7, 0.0], [0.0, 0.4]]))
        val = scale_map_loss(gt, gt)
        # only the clamp-induced focal residue remains
        assert val <= 1e-9

    def test_background_scale_ignored(self):
        gt = ScaleMap(confidence=np.zeros((3, 3)), scale=np.zeros((3, 3)))
        pred_a = ScaleMap(confidence=np.zeros((3, 3)) + 1e-9,
                          scale=np.full((3, 3), 0.9))
        pred_b = ScaleMap(confidence=np.zeros((3, 3)) + 1e-9,
                          scale=np.zeros((3, 3)))
        assert scale_map_loss(pred_a, gt) == pytest.approx(
            scale_map_loss(pred_b, gt), rel=1e-12)

    def test_toy_map_frozen_oracle(self):
        pred = ScaleMap(confidence=np.array([[0.9, 0.2], [0.4, 0.8]]),
                        scale=np.array([[0.6, 0.3], [0.5, 0.1]]))
        gt = ScaleMap(confidence=np.array([[1.0, 0.0], [0.0, 1.0]]),
                      scale=np.array([[0.7, 0.0], [0.0, 0.4]]))
        assert scale_map_loss(pred, gt) == pytest.approx(
            0.21762205454840797, rel=1e-12)

    def test_grid_mismatch_rejected(self):
        a = ScaleMap(confidence=np.zeros((2, 2)), scale=np.zeros((2, 2)))
        b = ScaleMap(confidence=np.zeros((2, 3)), scale=np.zeros((2, 3)))
        with pytest.raises(InvalidArgumentError):
            scale_map_loss(a, b)


class TestBoxLoss:
    def test_identity_boxes(self):
        box = np.array([0.2, 0.3, 0.6, 0.9])
        assert box_loss(box, box) == pytest.approx(0.0, abs=1e-15)

    def test_disjoint_boxes_giou_term(self):
        pred = np.array([0.0, 0.0, 1.0, 1.0]) / 3.0
        gt = np.array([2.0, 2.0, 3.0, 3.0]) / 3.0
        l1 = np.mean(np.abs(pred - gt))
        assert box_loss(pred, gt) == pytest.approx(l1 + 16.0 / 9.0, rel=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            x1, y1 = np.sort(rng.random(2)), np.sort(rng.random(2))
            x2, y2 = np.sort(rng.random(2)), np.sort(rng.random(2))
            a = np.array([x1[0], y1[0], x1[1], y1[1]])
            b = np.array([x2[0], y2[0], x2[1], y2[1]])
            assert box_loss(a, b) >= 0.0


def _admissible_boxes(rng):
    """Box pair away from every min/max branch boundary and L1 kink."""
    while True:
        x1, y1 = np.sort(rng.uniform(0, 1, 2)), np.sort(rng.uniform(0, 1, 2))
        x2, y2 = np.sort(rng.uniform(0, 1, 2)), np.sort(rng.uniform(0, 1, 2))
        pred = np.array([x1[0], y1[0], x1[1], y1[1]])
        gt = np.array([x2[0], y2[0], x2[1], y2[1]])
        if np.any(np.abs(pred - gt) < 1e-3):
            continue
        if pred[2] - pred[0] < 1e-2 or pred[3] - pred[1] < 1e-2:
            continue
        if gt[2] - gt[0] < 1e-2 or gt[3] - gt[1] < 1e-2:
            continue
        wi = min(pred[2], gt[2]) - max(pred[0], gt[0])
        hi = min(pred[3], gt[3]) - max(pred[1], gt[1])
        if abs(wi) < 1e-3 or abs(hi) < 1e-3:
            continue
        return pred, gt


class TestGradients:
    def test_focal_gradient_at_half(self):
        dev = grad_check(lambda x: focal_loss(x[0], 1),
                         lambda x: np.array([focal_loss_grad(x[0], 1)]),
                         np.array([0.5]))
        assert dev <= 1e-4

    def test_focal_gradient_sweep(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            p = rng.uniform(0.05, 0.95)
            y = int(rng.integers(0, 2))
            dev = grad_check(lambda x: focal_loss(x[0], y),
                             lambda x: np.array([focal_loss_grad(x[0], y)]),
                             np.array([p]))
            assert dev <= 1e-4

    def test_l1_gradient_is_sign_vector(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            gt = rng.normal(size=(4, 3))
            pred = gt + np.where(rng.random((4, 3)) < 0.5, -1.0, 1.0) \
                * rng.uniform(1e-3, 1.0, (4, 3))
            grad = l1_loss_grad(pred, gt)
            assert np.array_equal(grad, np.sign(pred - gt) / pred.size)
            dev = grad_check(lambda x: l1_loss(x, gt),
                             lambda x: l1_loss_grad(x, gt), pred)
            assert dev <= 1e-4

    def test_depth_gradient_sweep(self):
        rng = np.random.default_rng(12)
        checked = 0
        while checked < 100:
            d = rng.uniform(0.5, 10.0)
            d_gt = rng.uniform(0.5, 10.0)
            f = rng.uniform(200.0, 2000.0)
            f_gt = rng.uniform(200.0, 2000.0)
            if abs(1.0 / d_gt - f / (f_gt * d)) < 1e-3:
                continue
            dev = grad_check(
                lambda x: depth_loss(x[0], d_gt, f, f_gt),
                lambda x: np.array([depth_loss_grad(x[0], d_gt, f, f_gt)]),
                np.array([d]))
            assert dev <= 1e-4
            checked += 1

    def test_box_gradient_sweep(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            pred, gt = _admissible_boxes(rng)
            dev = grad_check(lambda x: box_loss(x, gt),
                             lambda x: box_loss_grad(x, gt), pred)
            assert dev <= 1e-4


class TestHungarian:
    def test_single_pair(self):
        match = hungarian(np.array([[3.5]]))
        assert match.gt_to_pred == (0,)
        assert match.total_cost == 3.5

    def test_dominant_diagonal(self):
        cost = np.full((4, 4), 10.0)
        np.fill_diagonal(cost, 0.0)
        match = hungarian(cost)
        assert match.gt_to_pred == (0, 1, 2, 3)
        assert match.total_cost == 0.0

    def test_matches_factorial_oracle(self):
        rng = np.random.default_rng(50)
        for _ in range(100):
            m = int(rng.integers(1, 8))
            n = int(rng.integers(m, 8))
            cost = rng.normal(size=(n, m))
            match = hungarian(cost)
            oracle_cost, _ = oracle_assignment(cost)
            assert match.total_cost == pytest.approx(oracle_cost, abs=1e-9)
            assert len(set(match.gt_to_pred)) == m

    def test_certificate_against_random_injections(self):
        rng = np.random.default_rng(51)
        cost = rng.normal(size=(9, 6))
        match = hungarian(cost)
        for _ in range(100):
            perm = rng.permutation(9)[:6]
            alt = sum(cost[perm[g], g] for g in range(6))
            assert match.total_cost <= alt + 1e-12

    def test_empty_targets(self):
        match = hungarian(np.zeros((4, 0)))
        assert match.gt_to_pred == ()
        assert match.total_cost == 0.0

    def test_infeasible_raises(self):
        with pytest.raises(InfeasibleMatchError):
            hungarian(np.zeros((2, 3)))


class TestMatchingCostMatrix:
    WEIGHTS = LossWeights()

    def test_no_targets_gives_empty(self):
        cost = matching_cost_matrix(np.zeros((3, 4)), np.zeros(3),
                                    [None] * 3, np.zeros((0, 4)),
                                    np.zeros((0, 2, 2)), self.WEIGHTS)
        assert cost.shape == (3, 0)
        assert hungarian(cost).gt_to_pred == ()

    def test_identical_pair_dominates_row_and_column(self):
        rng = np.random.default_rng(4)
        boxes = np.array([[0.1, 0.1, 0.4, 0.5], [0.5, 0.5, 0.9, 0.9],
                          [0.15, 0.55, 0.45, 0.95]])
        j2d = rng.random((3, 5, 2))
        conf = np.array([0.5, 0.5, 0.5])
        cost = matching_cost_matrix(boxes, conf, list(j2d), boxes, j2d,
                                    self.WEIGHTS)
        for k in range(3):
            assert cost[k, k] == min(cost[k, :].min(), cost[:, k].min())

    def test_frozen_three_by_three(self):
        pred_boxes = np.array([[0.1, 0.1, 0.3, 0.4], [0.5, 0.5, 0.8, 0.9],
                               [0.2, 0.6, 0.4, 0.95]])
        pred_conf = np.array([0.9, 0.6, 0.3])
        pred_j2d = [np.array([[0.2, 0.25], [0.22, 0.35]]),
                    np.array([[0.65, 0.7], [0.6, 0.8]]),
                    np.array([[0.3, 0.77], [0.28, 0.9]])]
        gt_boxes = np.array([[0.12, 0.12, 0.31, 0.42], [0.48, 0.52, 0.82, 0.88],
                             [0.18, 0.58, 0.42, 0.97]])
        gt_j2d = np.array([[[0.21, 0.27], [0.23, 0.33]],
                           [[0.66, 0.71], [0.58, 0.79]],
                           [[0.3, 0.76], [0.3, 0.92]]])
        cost = matching_cost_matrix(pred_boxes, pred_conf, pred_j2d,
                                    gt_boxes, gt_j2d, self.WEIGHTS)
        expected = np.array([
            [-2.4606563706563715, 17.850427350427346, 12.52155172413793],
            [18.897579185520364, -1.443613445378151, 8.85897391901167],
            [14.397056798623062, 10.081639159789946, -0.15572649572649555]])
        assert np.allclose(cost, expected, atol=1e-12)
        assert hungarian(cost).gt_to_pred == (0, 1, 2)


def _toy_scene():
    """Two ground-truth persons, three predictions (one unmatched)."""
    rng = np.random.default_rng(77)
    j = 6
    gt = GroundTruthBundle(
        pose=rng.normal(0, 0.4, (2, 4, 3)),
        shape=rng.normal(0, 0.8, (2, 10)),
        boxes=np.array([[0.1, 0.1, 0.42, 0.62], [0.5, 0.45, 0.83, 0.97]]),
        joints3d=rng.normal(0, 0.5, (2, j, 3)) + np.array([0, 0, 4.0]),
        joints2d=rng.random((2, j, 2)),
        depth=np.array([3.7, 5.2]))
    pred = PredictionBundle(
        pose=gt.pose[[0, 1, 0]] + rng.normal(0, 0.05, (3, 4, 3)),
        shape=gt.shape[[0, 1, 0]] + rng.normal(0, 0.05, (3, 10)),
        boxes=np.clip(gt.boxes[[0, 1, 0]]
                      + rng.normal(0, 0.01, (3, 4)), 0, 1),
        confidence=np.array([0.88, 0.91, 0.2]),
        joints3d=gt.joints3d[[0, 1, 0]] + rng.normal(0, 0.02, (3, j, 3)),
        joints2d=[gt.joints2d[0] + 0.01, gt.joints2d[1] - 0.005,
                  gt.joints2d[0] + 0.3],
        root_depth=np.array([3.8, 5.0, 9.0]))
    return pred, gt


class TestTotalLoss:
    def test_perfect_predictions_vanish(self):
        pred, gt = _toy_scene()
        perfect = PredictionBundle(
            pose=gt.pose, shape=gt.shape, boxes=gt.boxes,
            confidence=np.ones(2), joints3d=gt.joints3d,
            joints2d=[gt.joints2d[0], gt.joints2d[1]],
            root_depth=gt.depth.copy())
        gt_map = ScaleMap(confidence=np.array([[1.0, 0.0]]),
                          scale=np.array([[0.5, 0.0]]))
        out = total_loss(perfect, gt, gt_map, gt_map, LossWeights(),
                         focal_px=700.0, focal_gt_px=700.0)
        for key, value in out.terms.items():
            if key in ("det", "map"):
                assert value <= 1e-9  # clamp-induced focal residue
            else:
                assert value <= 1e-9

    def test_zero_weights_zero_total(self):
        pred, gt = _toy_scene()
        zero = LossWeights(map=0, depth=0, pose=0, shape=0, j3d=0, j2d=0,
                           box=0, det=0)
        out = total_loss(pred, gt, None, None, zero, 700.0, 700.0)
        assert out.total == 0.0

    def test_term_by_term_oracle(self):
        pred, gt = _toy_scene()
        weights = LossWeights()
        out = total_loss(pred, gt, None, None, weights, 650.0, 700.0)
        assert out.match.gt_to_pred == (0, 1)

        # independent naive evaluation
        exp = {"depth": 0.0, "pose": 0.0, "shape": 0.0, "j3d": 0.0,
               "j2d": 0.0, "box": 0.0}
        for g, p in enumerate((0, 1)):
            exp["depth"] += abs(1 / gt.depth[g]
                                - 650.0 / (700.0 * pred.root_depth[p])) / 2
            exp["pose"] += np.abs(pred.pose[p] - gt.pose[g]).mean() / 2
            exp["shape"] += np.abs(pred.shape[p] - gt.shape[g]).mean() / 2
            exp["j3d"] += np.abs(pred.joints3d[p] - gt.joints3d[g]).mean() / 2
            exp["j2d"] += np.abs(pred.joints2d[p] - gt.joints2d[g]).mean() / 2
            exp["box"] += box_loss(pred.boxes[p], gt.boxes[g]) / 2
        det = (focal_loss(0.88, 1) + focal_loss(0.91, 1)
               + focal_loss(0.2, 0)) / 3
        for key, value in exp.items():
            assert out.terms[key] == pytest.approx(value, rel=1e-12)
        assert out.terms["det"] == pytest.approx(det, rel=1e-12)
        total = sum(getattr(weights, k) * v for k, v in exp.items()) \
            + weights.det * det
        assert out.total == pytest.approx(total, rel=1e-12)

    def test_invariant_under_prediction_permutation(self):
        pred, gt = _toy_scene()
        perm = [2, 0, 1]
        shuffled = PredictionBundle(
            pose=pred.pose[perm], shape=pred.shape[perm],
            boxes=pred.boxes[perm], confidence=pred.confidence[perm],
            joints3d=pred.joints3d[perm],
            joints2d=[pred.joints2d[i] for i in perm],
            root_depth=pred.root_depth[perm])
        a = total_loss(pred, gt, None, None, LossWeights(), 700.0, 700.0)
        b = total_loss(shuffled, gt, None, None, LossWeights(), 700.0, 700.0)
        assert a.total == pytest.approx(b.total, rel=1e-12)

    def test_breakdown_serializes(self):
        pred, gt = _toy_scene()
        out = total_loss(pred, gt, None, None, LossWeights(), 700.0, 700.0)
        payload = out.to_json_dict()
        assert payload["match"] == [0, 1]
        assert len(payload["per_person"]) == 2
        assert set(payload["terms"]) == {"map", "depth", "pose", "shape",
                                         "j3d", "j2d", "box", "det"}

"""Ground-truth scale maps and patch classification."""

import numpy as np
import pytest

from satkit.errors import InvalidAnnotationError, InvalidArgumentError
from satkit.geometry import BBox, ImageDims
from satkit.scale_map import (PatchClass, ScaleMap, Thresholds,
                              build_gt_scale_map, classify)
from satkit.scene import PersonAnnotation
from satkit.token_engine import partition

from helpers import oracle_scale_map, random_annotations


def grid_644():
    return partition(ImageDims(322, 182), 14)  # low-res dims of a 644x364 frame


class TestBuildGtScaleMap:
    def test_empty_scene_is_all_background(self):
        m = build_gt_scale_map(grid_644(), [], 644)
        assert np.all(m.confidence == 0.0)
        assert np.all(m.scale == 0.0)

    def test_single_person_covering_everything(self):
        person = PersonAnnotation(bbox=BBox(0, 0, 644, 364), root_depth=3.0)
        m = build_gt_scale_map(grid_644(), [person], 644)
        assert np.all(m.confidence == 1.0)
        expected = min(np.hypot(644, 364) / 644, 1.0)
        assert np.all(m.scale == expected)

    def test_uniform_scale_value_propagates(self):
        # Box with diagonal exactly 0.9 * longest side.
        w, hgt = 515.68, 264.0
        assert np.hypot(w, hgt) / 644 == pytest.approx(0.9, abs=1e-3)
        person = PersonAnnotation(bbox=BBox(10, 10, 10 + w, 10 + hgt),
                                  root_depth=3.0)
        m = build_gt_scale_map(grid_644(), [person], 644)
        covered = m.confidence == 1.0
        assert covered.any()
        assert np.allclose(m.scale[covered], np.hypot(w, hgt) / 644)
        assert np.all(m.scale[~covered] == 0.0)

    def test_nearest_person_wins_shared_patches(self):
        grid = grid_644()
        # depth 2 with scale 0.8 (diag = 0.8 * 644), depth 5 with scale ~0.3
        near = PersonAnnotation(bbox=BBox(0, 0, 412.16, 264.0), root_depth=2.0)
        far = PersonAnnotation(bbox=BBox(100, 50, 260.0, 180.0), root_depth=5.0)
        s_near = near.bbox.diagonal / 644
        m = build_gt_scale_map(grid, [far, near], 644)
        conf_o, scale_o = oracle_scale_map(grid.rows, grid.cols, 14,
                                           [far, near], 644)
        assert np.array_equal(m.confidence, conf_o)
        assert np.array_equal(m.scale, scale_o)
        # A patch inside both boxes carries the near person's scale.
        assert m.scale[4, 5] == pytest.approx(s_near, rel=1e-12)

    def test_matches_oracle_on_random_scenes(self):
        rng = np.random.default_rng(99)
        for _ in range(30):
            rows = int(rng.integers(1, 27))
            cols = int(rng.integers(1, 47))
            grid = partition(ImageDims(cols * 14, rows * 14), 14)
            longest = 2 * max(cols, rows) * 14
            persons = random_annotations(rng, cols * 28, rows * 28)
            m = build_gt_scale_map(grid, persons, longest)
            conf_o, scale_o = oracle_scale_map(rows, cols, 14, persons, longest)
            assert np.array_equal(m.confidence, conf_o)
            assert np.array_equal(m.scale, scale_o)

    def test_boundary_touching_does_not_count(self):
        # Box ends exactly at a patch boundary: zero-area contact.
        grid = grid_644()
        person = PersonAnnotation(bbox=BBox(0, 0, 28.0, 28.0), root_depth=2.0)
        m = build_gt_scale_map(grid, [person], 644)
        assert m.confidence[0, 0] == 1.0
        assert m.confidence[0, 1] == 0.0
        assert m.confidence[1, 0] == 0.0
        assert m.confidence[1, 1] == 0.0

    def test_non_positive_depth_rejected(self):
        person = PersonAnnotation(bbox=BBox(0, 0, 10, 10), root_depth=0.0)
        with pytest.raises(InvalidAnnotationError):
            build_gt_scale_map(grid_644(), [person], 644)


class TestClassify:
    def test_zero_confidence_is_background(self):
        m = ScaleMap(confidence=np.array([[0.0]]), scale=np.array([[0.9]]))
        grid = classify(m, Thresholds(confidence=0.3, scale=0.5))
        assert grid[0, 0] == PatchClass.BACKGROUND

    def test_confident_small(self):
        m = ScaleMap(confidence=np.array([[0.9]]), scale=np.array([[0.2]]))
        grid = classify(m, Thresholds(confidence=0.3, scale=0.5))
        assert grid[0, 0] == PatchClass.SMALL

    def test_scale_at_threshold_is_large(self):
        m = ScaleMap(confidence=np.array([[0.9]]), scale=np.array([[0.5]]))
        grid = classify(m, Thresholds(confidence=0.3, scale=0.5))
        assert grid[0, 0] == PatchClass.LARGE

    def test_confidence_at_threshold_is_person(self):
        m = ScaleMap(confidence=np.array([[0.3]]), scale=np.array([[0.1]]))
        grid = classify(m, Thresholds(confidence=0.3, scale=0.5))
        assert grid[0, 0] == PatchClass.SMALL

    def test_partition_is_exhaustive(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            rows, cols = rng.integers(1, 30, 2)
            m = ScaleMap(confidence=rng.random((rows, cols)),
                         scale=rng.random((rows, cols)))
            grid = classify(m, Thresholds())
            bg = np.sum(grid == PatchClass.BACKGROUND)
            small = np.sum(grid == PatchClass.SMALL)
            large = np.sum(grid == PatchClass.LARGE)
            assert bg + small + large == rows * cols

    def test_raising_scale_threshold_never_promotes_to_large(self):
        rng = np.random.default_rng(33)
        m = ScaleMap(confidence=rng.random((12, 9)), scale=rng.random((12, 9)))
        lo = classify(m, Thresholds(scale=0.3))
        hi = classify(m, Thresholds(scale=0.7))
        moved_up = (lo == PatchClass.SMALL) & (hi == PatchClass.LARGE)
        assert not moved_up.any()

    def test_threshold_extremes(self):
        rng = np.random.default_rng(8)
        m = ScaleMap(confidence=rng.uniform(0.01, 1.0, (7, 7)),
                     scale=rng.random((7, 7)))
        all_person = classify(m, Thresholds(confidence=0.0))
        assert not (all_person == PatchClass.BACKGROUND).any()
        # Confidence strictly below 1 everywhere -> all background at 1.0.
        m2 = ScaleMap(confidence=np.clip(m.confidence, 0, 0.999),
                      scale=m.scale)
        assert (classify(m2, Thresholds(confidence=1.0))
                == PatchClass.BACKGROUND).all()

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            Thresholds(confidence=1.5)
        with pytest.raises(InvalidArgumentError):
            ScaleMap(confidence=np.array([[2.0]]), scale=np.array([[0.0]]))


class TestSerialization:
    def test_json_roundtrip(self):
        rng = np.random.default_rng(4)
        m = ScaleMap(confidence=rng.random((5, 8)), scale=rng.random((5, 8)))
        back = ScaleMap.from_json_dict(m.to_json_dict())
        assert np.array_equal(back.confidence, m.confidence)
        assert np.array_equal(back.scale, m.scale)

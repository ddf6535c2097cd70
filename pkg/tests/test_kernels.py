"""Backend equivalence: compiled kernels must bit-match the numpy fallback."""

import numpy as np
import pytest

from satkit import _kernels
from satkit._kernels import gridcore_py

from helpers import random_annotations

needs_compiled = pytest.mark.skipif(
    not _kernels.COMPILED, reason="compiled kernels unavailable")


@needs_compiled
def test_rasterize_bit_equal_across_backends():
    from satkit._kernels import _gridcore
    rng = np.random.default_rng(123)
    for _ in range(50):
        rows = int(rng.integers(1, 47))
        cols = int(rng.integers(1, 47))
        persons = random_annotations(rng, cols * 28, rows * 28)
        boxes = np.array([[p.bbox.x_min, p.bbox.y_min, p.bbox.x_max,
                           p.bbox.y_max] for p in persons]).reshape(-1, 4)
        depths = np.array([p.root_depth for p in persons])
        scales = rng.random(len(persons))
        got_c, got_s = _gridcore.rasterize_scale_map(
            rows, cols, 28.0, boxes, depths, scales)
        exp_c, exp_s = gridcore_py.rasterize_scale_map(
            rows, cols, 28.0, boxes, depths, scales)
        assert np.array_equal(got_c, exp_c)
        assert np.array_equal(got_s, exp_s)


@needs_compiled
def test_pool_bit_equal_across_backends():
    from satkit._kernels import _gridcore
    rng = np.random.default_rng(42)
    for _ in range(100):
        rows = int(rng.integers(1, 47))
        cols = int(rng.integers(1, 47))
        mask = (rng.random((rows, cols)) < 0.6).astype(np.uint8)
        got_a, got_r = _gridcore.pool_background_mask(mask)
        exp_a, exp_r = gridcore_py.pool_background_mask(mask)
        assert np.array_equal(got_a, exp_a)
        assert np.array_equal(got_r, exp_r)


def test_env_override_selects_python(monkeypatch):
    import importlib
    import satkit._kernels as pkg
    monkeypatch.setenv("SATKIT_PURE_PYTHON", "1")
    reloaded = importlib.reload(pkg)
    try:
        assert reloaded.BACKEND_NAME == "python"
        assert not reloaded.COMPILED
    finally:
        monkeypatch.delenv("SATKIT_PURE_PYTHON")
        importlib.reload(pkg)

"""Binary PPM (P6) renderings of scale maps and token layouts.

Color convention: background is white; person patches interpolate from
rose (scale 0, far/small) to blue (scale 1, near/large). Token layouts show
patch rectangles at their three sizes with background tokens greyed out.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import ImageDims
from .scale_map import ScaleMap
from .token_engine import Provenance, TokenLayout

BLUE = np.array([70, 100, 230], dtype=np.float64)    # scale 1
ROSE = np.array([235, 100, 150], dtype=np.float64)   # scale 0
WHITE = np.array([255, 255, 255], dtype=np.uint8)
POOLED_GREY = np.array([165, 165, 165], dtype=np.uint8)
UNPOOLED_GREY = np.array([205, 205, 205], dtype=np.uint8)


def scale_color(scale: float) -> np.ndarray:
    """Linear rose-to-blue ramp over scale in [0, 1]."""
    rgb = ROSE + (BLUE - ROSE) * float(scale)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def ppm_bytes(pixels: np.ndarray) -> bytes:
    """Encode an (H, W, 3) uint8 array as binary PPM."""
    h, w = pixels.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.astype(np.uint8).tobytes()


def write_ppm(pixels: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(ppm_bytes(pixels))


def render_scale_map(scale_map: ScaleMap, dims_hr: ImageDims,
                     patch_size: int) -> np.ndarray:
    """Rasterize a scale map at high-res image dimensions.

    Each patch paints its 2P x 2P high-res block; white for background.
    """
    canvas = np.full((dims_hr.height, dims_hr.width, 3), 255, dtype=np.uint8)
    cell = 2 * patch_size
    for i in range(scale_map.rows):
        for j in range(scale_map.cols):
            if scale_map.confidence[i, j] < 0.5:
                continue
            color = scale_color(scale_map.scale[i, j])
            canvas[i * cell:(i + 1) * cell, j * cell:(j + 1) * cell] = color
    return canvas


def render_token_layout(layout: TokenLayout, dims_hr: ImageDims,
                        scale_map: ScaleMap | None = None) -> np.ndarray:
    """Rasterize token rectangles at high-res dimensions.

    Background tokens are greyed (pooled darker than unpooled); unchanged
    and high-res tokens use the scale ramp when a map is supplied, a flat
    blue/rose otherwise. A 1-pixel darker border marks each token.
    """
    canvas = np.full((dims_hr.height, dims_hr.width, 3), 255, dtype=np.uint8)
    cell = 2 * layout.grid.patch_size
    for rec in layout.records:
        if rec.provenance is Provenance.POOLED_BACKGROUND:
            color = POOLED_GREY
        elif rec.provenance is Provenance.UNPOOLED_BACKGROUND:
            color = UNPOOLED_GREY
        else:
            if scale_map is not None:
                i, j = rec.sources[0]
                color = scale_color(scale_map.scale[i, j])
            else:
                color = scale_color(
                    1.0 if rec.provenance is Provenance.LARGE_LOWRES else 0.0)
        if rec.provenance is Provenance.HIGHRES:
            i, j = rec.hr_cell
            y0, x0 = i * cell // 2, j * cell // 2
            y1, x1 = y0 + cell // 2, x0 + cell // 2
        else:
            rr = [c[0] for c in rec.sources]
            cc = [c[1] for c in rec.sources]
            y0, x0 = min(rr) * cell, min(cc) * cell
            y1, x1 = (max(rr) + 1) * cell, (max(cc) + 1) * cell
        y1 = min(y1, dims_hr.height)
        x1 = min(x1, dims_hr.width)
        if y0 >= y1 or x0 >= x1:
            continue
        canvas[y0:y1, x0:x1] = color
        border = np.clip(color.astype(np.int64) - 45, 0, 255).astype(np.uint8)
        canvas[y0, x0:x1] = border
        canvas[y1 - 1, x0:x1] = border
        canvas[y0:y1, x0] = border
        canvas[y0:y1, x1 - 1] = border
    return canvas

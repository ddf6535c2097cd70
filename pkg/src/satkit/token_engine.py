"""Token mechanics: partition, replace, pool, assemble, and price.

Small-scale low-res patches are replaced by their 4 high-res children;
background patches are pooled 2x2 where an aligned block is fully
background, with the remainder kept as-is; large-scale patches pass
through. The assembled layout is ordered: pooled background, unpooled
background, large, high-res, each group row-major by source position.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError
from .geometry import ImageDims
from .scale_map import PatchClass


@dataclass(frozen=True)
class PatchGrid:
    """Patch partition of an image: rows x cols cells of patch_size pixels."""

    rows: int
    cols: int
    patch_size: int
    pad_x: int = 0
    pad_y: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.patch_size < 1:
            raise InvalidArgumentError(f"invalid grid {self}")

    @property
    def cell_count(self) -> int:
        return self.rows * self.cols

    def doubled(self) -> "PatchGrid":
        """The aligned high-res grid: twice the cells in each axis."""
        return PatchGrid(self.rows * 2, self.cols * 2, self.patch_size)

    def flat(self, row: int, col: int) -> int:
        return row * self.cols + col


def partition(dims: ImageDims, patch_size: int) -> PatchGrid:
    """Partition an image into patch_size cells, padding up to multiples."""
    if patch_size < 1:
        raise InvalidArgumentError(f"patch_size must be >= 1, got {patch_size}")
    rows = math.ceil(dims.height / patch_size)
    cols = math.ceil(dims.width / patch_size)
    return PatchGrid(rows=rows, cols=cols, patch_size=patch_size,
                     pad_x=cols * patch_size - dims.width,
                     pad_y=rows * patch_size - dims.height)


class Provenance(str, enum.Enum):
    POOLED_BACKGROUND = "pooled_background"
    UNPOOLED_BACKGROUND = "unpooled_background"
    LARGE_LOWRES = "large_lowres"
    HIGHRES = "highres"


@dataclass(frozen=True)
class TokenRecord:
    """One token: where it came from and where it sits in the image.

    ``sources`` are low-res grid cells (4 or 16 for pooled, 1 otherwise; for
    high-res tokens, the parent low-res cell). ``hr_cell`` is set only for
    high-res tokens. ``center``/``extent`` are in normalized image coords.
    """

    provenance: Provenance
    sources: tuple[tuple[int, int], ...]
    center: tuple[float, float]
    extent: tuple[float, float]
    hr_cell: tuple[int, int] | None = None

    def to_json_dict(self) -> dict:
        return {
            "provenance": self.provenance.value,
            "sources": [list(s) for s in self.sources],
            "hr_cell": list(self.hr_cell) if self.hr_cell else None,
            "center": list(self.center),
            "extent": list(self.extent),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "TokenRecord":
        return cls(
            provenance=Provenance(payload["provenance"]),
            sources=tuple(tuple(s) for s in payload["sources"]),
            hr_cell=tuple(payload["hr_cell"]) if payload["hr_cell"] else None,
            center=tuple(payload["center"]),
            extent=tuple(payload["extent"]),
        )


@dataclass(frozen=True)
class TokenCounts:
    """Exact token arithmetic for one scene."""

    lowres: int            # uniform low-res token count
    background: int        # low-res background cells
    pooled_groups: int     # aligned 2x2 blocks pooled (first pass)
    remainder: int         # background cells left unpooled
    background_out: int    # background tokens emitted
    small: int
    large: int
    highres: int           # 4 * small
    total: int             # tokens entering the main encoder

    def to_json_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "lowres", "background", "pooled_groups", "remainder",
            "background_out", "small", "large", "highres", "total")}


@dataclass
class TokenLayout:
    """Ordered token records for one scene plus their count summary."""

    grid: PatchGrid
    records: list[TokenRecord]
    counts: TokenCounts

    def validate_coverage(self) -> None:
        """Every low-res cell accounted for exactly once.

        Background and large cells must appear in exactly one record's source
        set; each small cell must be claimed by exactly its 4 high-res
        children (a quarter-claim each).
        """
        claims = np.zeros((self.grid.rows, self.grid.cols), dtype=np.int64)
        for rec in self.records:
            if rec.provenance is Provenance.HIGHRES:
                (i, j), = rec.sources
                claims[i, j] += 1  # quarter claim
            else:
                for i, j in rec.sources:
                    claims[i, j] += 4
        if not np.all(claims == 4):
            bad = np.argwhere(claims != 4)
            raise InvalidArgumentError(
                f"cells covered wrongly (first: {bad[0].tolist()})")

    def to_json_dict(self) -> dict:
        return {
            "grid": {"rows": self.grid.rows, "cols": self.grid.cols,
                     "patch_size": self.grid.patch_size,
                     "pad_x": self.grid.pad_x, "pad_y": self.grid.pad_y},
            "counts": self.counts.to_json_dict(),
            "records": [rec.to_json_dict() for rec in self.records],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "TokenLayout":
        g = payload["grid"]
        return cls(
            grid=PatchGrid(g["rows"], g["cols"], g["patch_size"],
                           g["pad_x"], g["pad_y"]),
            records=[TokenRecord.from_json_dict(r) for r in payload["records"]],
            counts=TokenCounts(**payload["counts"]),
        )


def _check_class_grid(grid: PatchGrid, class_grid: np.ndarray) -> np.ndarray:
    class_grid = np.asarray(class_grid)
    if class_grid.shape != (grid.rows, grid.cols):
        raise InvalidArgumentError(
            f"class grid {class_grid.shape} does not match grid "
            f"({grid.rows}, {grid.cols})")
    return class_grid


def expand_small(class_grid: np.ndarray) -> list[tuple[int, int]]:
    """High-res children of every small cell, row-major over the 2x grid."""
    class_grid = np.asarray(class_grid)
    small = np.argwhere(class_grid == PatchClass.SMALL)
    if small.size == 0:
        return []
    base = small * 2
    children = np.concatenate([base + (di, dj)
                               for di in (0, 1) for dj in (0, 1)])
    order = np.lexsort((children[:, 1], children[:, 0]))
    return [tuple(c) for c in children[order].tolist()]


def pool_background(class_grid: np.ndarray):
    """Aligned 2x2 pooling of background cells.

    Returns ``(groups, remainder)``: each group is the 4 cells of one pooled
    block (row-major anchors); remainder holds unpooled background cells.
    """
    background = (np.asarray(class_grid) == PatchClass.BACKGROUND)
    anchors, rem = _kernels.pool_background_mask(
        background.astype(np.uint8))
    groups = [((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1))
              for r, c in anchors.tolist()]
    remainder = [tuple(cell) for cell in rem.tolist()]
    return groups, remainder


def _pool_again(groups: list[tuple]):
    """Second pooling pass: merge aligned 2x2 blocks of pooled blocks."""
    if not groups:
        return [], []
    anchors = {g[0] for g in groups}
    max_r = max(r for r, _ in anchors) + 2
    max_c = max(c for _, c in anchors) + 2
    mask = np.zeros((max_r // 2, max_c // 2), dtype=np.uint8)
    for r, c in anchors:
        mask[r // 2, c // 2] = 1
    merged_anchors, leftover = _kernels.pool_background_mask(mask)
    merged = []
    for br, bc in merged_anchors.tolist():
        r, c = br * 2, bc * 2
        merged.append(tuple((r + dr, c + dc)
                            for dr in range(4) for dc in range(4)))
    kept = [((r * 2, c * 2), (r * 2, c * 2 + 1), (r * 2 + 1, c * 2),
             (r * 2 + 1, c * 2 + 1)) for r, c in leftover.tolist()]
    return merged, kept


def _cell_center(grid: PatchGrid, cells: Iterable[tuple[int, int]]):
    cells = list(cells)
    cy = sum(i + 0.5 for i, _ in cells) / len(cells) / grid.rows
    cx = sum(j + 0.5 for _, j in cells) / len(cells) / grid.cols
    return (cx, cy)


def assemble(grid: PatchGrid, class_grid: np.ndarray,
             pool_twice: bool = False) -> TokenLayout:
    """Build the ordered scale-adaptive token layout from a class grid."""
    class_grid = _check_class_grid(grid, class_grid)

    groups, remainder = pool_background(class_grid)
    pooled_groups = len(groups)
    if pool_twice:
        merged, kept = _pool_again(groups)
        emit_groups = sorted(merged + kept, key=lambda g: g[0])
    else:
        emit_groups = groups

    records: list[TokenRecord] = []
    ext_x, ext_y = 1.0 / grid.cols, 1.0 / grid.rows
    for cells in emit_groups:
        side = int(math.isqrt(len(cells)))  # 2 for 4 cells, 4 for 16
        records.append(TokenRecord(
            provenance=Provenance.POOLED_BACKGROUND,
            sources=tuple(cells),
            center=_cell_center(grid, cells),
            extent=(side * ext_x, side * ext_y),
        ))
    for cell in remainder:
        records.append(TokenRecord(
            provenance=Provenance.UNPOOLED_BACKGROUND,
            sources=(cell,),
            center=_cell_center(grid, [cell]),
            extent=(ext_x, ext_y),
        ))

    large_cells = [tuple(c) for c in
                   np.argwhere(class_grid == PatchClass.LARGE).tolist()]
    for cell in large_cells:
        records.append(TokenRecord(
            provenance=Provenance.LARGE_LOWRES,
            sources=(cell,),
            center=_cell_center(grid, [cell]),
            extent=(ext_x, ext_y),
        ))

    hr_grid = grid.doubled()
    hr_cells = expand_small(class_grid)
    for i, j in hr_cells:
        records.append(TokenRecord(
            provenance=Provenance.HIGHRES,
            sources=((i // 2, j // 2),),
            hr_cell=(i, j),
            center=((j + 0.5) / hr_grid.cols, (i + 0.5) / hr_grid.rows),
            extent=(ext_x / 2.0, ext_y / 2.0),
        ))

    n_background = int(np.sum(class_grid == PatchClass.BACKGROUND))
    n_small = int(np.sum(class_grid == PatchClass.SMALL))
    counts = TokenCounts(
        lowres=grid.cell_count,
        background=n_background,
        pooled_groups=pooled_groups,
        remainder=len(remainder),
        background_out=len(emit_groups) + len(remainder),
        small=n_small,
        large=len(large_cells),
        highres=len(hr_cells),
        total=len(records),
    )
    layout = TokenLayout(grid=grid, records=records, counts=counts)
    layout.validate_coverage()
    return layout


def uniform_layout(grid: PatchGrid) -> TokenLayout:
    """Baseline layout: one unchanged token per grid cell, row-major."""
    all_large = np.full((grid.rows, grid.cols), PatchClass.LARGE, dtype=np.uint8)
    return assemble(grid, all_large)


@dataclass(frozen=True)
class CostModel:
    """Per-layer multiply-add model for a transformer encoder stage.

    One layer over k width-d tokens costs 4*k*d^2 (attention projections)
    + 2*k^2*d (attention matrices) + 2*r*k*d^2 (MLP with expansion r).
    """

    d_model: int
    mlp_ratio: int = 4
    layers_lowres: int = 3
    layers_highres: int = 3
    layers_adaptive: int = 9

    def __post_init__(self):
        for name in ("d_model", "mlp_ratio", "layers_lowres",
                     "layers_highres", "layers_adaptive"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer")


def attention_cost(tokens: int, cm: CostModel, layers: int = 1) -> int:
    """Exact multiply-add count for ``layers`` encoder layers of k tokens."""
    if tokens < 1:
        raise InvalidArgumentError(f"token count must be >= 1, got {tokens}")
    k, d, r = int(tokens), int(cm.d_model), int(cm.mlp_ratio)
    per_layer = 4 * k * d * d + 2 * k * k * d + 2 * r * k * d * d
    return layers * per_layer


def pipeline_cost_uniform(tokens: int, cm: CostModel) -> int:
    """Baseline encoder: all (lowres + adaptive) layers at one token count."""
    return attention_cost(tokens, cm, cm.layers_lowres + cm.layers_adaptive)


def pipeline_cost_adaptive(counts: TokenCounts, cm: CostModel) -> int:
    """Adaptive encoder cost.

    The high-res shallow stage processes the full high-res image (only
    selected tokens are retained afterwards), so it is charged at 4x the
    low-res token count.
    """
    return (attention_cost(counts.lowres, cm, cm.layers_lowres)
            + attention_cost(4 * counts.lowres, cm, cm.layers_highres)
            + attention_cost(counts.total, cm, cm.layers_adaptive))

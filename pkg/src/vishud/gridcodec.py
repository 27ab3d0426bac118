"""Conversion between box annotations and the fixed grid labeling.

Every image is divided into stride x stride cells.  A cell whose center
falls inside a ground-truth box gets coverage 1 and stores the box
corners relative to the cell center; every other cell is "don't care"
and is excluded from the corner loss.  Decoding inverts the encoding for
cells whose predicted coverage clears a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import isfinite
from typing import Sequence

import numpy as np

from .errors import BadConfigError, DegenerateBoxError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates, corners (x1, y1) - (x2, y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not all(isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise DegenerateBoxError(f"non-finite corners {self}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DegenerateBoxError(
                f"need x1 < x2 and y1 < y2, got ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def intersection_area(self, other: "BBox") -> float:
        w = min(self.x2, other.x2) - max(self.x1, other.x1)
        h = min(self.y2, other.y2) - max(self.y1, other.y1)
        return w * h if (w > 0 and h > 0) else 0.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class GridSpec:
    """Cell geometry: stride pixels per cell, grid_w x grid_h cells."""

    stride: int
    grid_w: int
    grid_h: int

    def __post_init__(self):
        if self.stride < 1 or self.grid_w < 1 or self.grid_h < 1:
            raise BadConfigError(f"grid fields must be positive: {self}")

    @classmethod
    def for_image(cls, width: int, height: int, stride: int) -> "GridSpec":
        if width % stride or height % stride:
            raise BadConfigError(
                f"image {width}x{height} is not a multiple of stride {stride}")
        return cls(stride=stride, grid_w=width // stride, grid_h=height // stride)

    @property
    def image_w(self) -> int:
        return self.stride * self.grid_w

    @property
    def image_h(self) -> int:
        return self.stride * self.grid_h

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return ((j + 0.5) * self.stride, (i + 0.5) * self.stride)


@dataclass
class LabelGrid:
    """Training target: coverage, relative corners, and don't-care mask."""

    coverage: np.ndarray          # (grid_h, grid_w) float64
    offsets: np.ndarray           # (grid_h, grid_w, 4) float64, corners minus cell center
    dontcare: np.ndarray          # (grid_h, grid_w) bool

    def __post_init__(self):
        gh, gw = self.coverage.shape
        if self.offsets.shape != (gh, gw, 4) or self.dontcare.shape != (gh, gw):
            raise BadConfigError(
                f"inconsistent label shapes: {self.coverage.shape}, "
                f"{self.offsets.shape}, {self.dontcare.shape}")


@dataclass(frozen=True)
class Candidate:
    """One decoded box with the coverage score of its emitting cell."""

    box: BBox
    score: float


def encode(boxes: Sequence[BBox], grid: GridSpec) -> LabelGrid:
    """Rasterize boxes onto the grid.

    A cell is covered when some box contains its center under the
    half-open rule x1 <= cx < x2, y1 <= cy < y2.  When several boxes
    contain the center, the one with the largest intersection area with
    the cell's stride x stride square wins; area ties go to the earlier
    box in the list.  Covered cells store (x1-cx, y1-cy, x2-cx, y2-cy);
    everything else is zeroed and flagged don't-care.
    """
    for b in boxes:
        if not isinstance(b, BBox):
            raise DegenerateBoxError(f"expected BBox, got {type(b).__name__}")
    gh, gw = grid.grid_h, grid.grid_w
    coverage = np.zeros((gh, gw))
    offsets = np.zeros((gh, gw, 4))
    dontcare = np.ones((gh, gw), dtype=bool)
    s = float(grid.stride)
    for i in range(gh):
        cy = (i + 0.5) * s
        for j in range(gw):
            cx = (j + 0.5) * s
            cell = None
            best_area = -1.0
            for b in boxes:
                if b.x1 <= cx < b.x2 and b.y1 <= cy < b.y2:
                    area = b.intersection_area(BBox(j * s, i * s, (j + 1) * s, (i + 1) * s))
                    if area > best_area:
                        best_area = area
                        cell = b
            if cell is not None:
                coverage[i, j] = 1.0
                dontcare[i, j] = False
                offsets[i, j] = (cell.x1 - cx, cell.y1 - cy, cell.x2 - cx, cell.y2 - cy)
    return LabelGrid(coverage=coverage, offsets=offsets, dontcare=dontcare)


def decode(coverage: np.ndarray, offsets: np.ndarray, grid: GridSpec,
           threshold: float) -> list[Candidate]:
    """Turn above-threshold cells back into candidate boxes, row-major.

    Corners are clamped to the image frame; a cell whose clamped box
    collapses (zero width or height) emits nothing.
    """
    gh, gw = grid.grid_h, grid.grid_w
    if coverage.shape != (gh, gw) or offsets.shape != (gh, gw, 4):
        raise BadConfigError(
            f"maps {coverage.shape}/{offsets.shape} do not match grid {gh}x{gw}")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    w_img, h_img = float(grid.image_w), float(grid.image_h)
    out: list[Candidate] = []
    for i in range(gh):
        for j in range(gw):
            if coverage[i, j] < threshold:
                continue
            cx, cy = grid.cell_center(i, j)
            x1 = min(max(cx + offsets[i, j, 0], 0.0), w_img)
            y1 = min(max(cy + offsets[i, j, 1], 0.0), h_img)
            x2 = min(max(cx + offsets[i, j, 2], 0.0), w_img)
            y2 = min(max(cy + offsets[i, j, 3], 0.0), h_img)
            if x1 < x2 and y1 < y2:
                out.append(Candidate(BBox(x1, y1, x2, y2), float(coverage[i, j])))
    return out


def format_labelgrid(label: LabelGrid) -> str:
    """One text line per cell: "i j coverage dc x1off y1off x2off y2off"."""
    lines = []
    gh, gw = label.coverage.shape
    for i in range(gh):
        for j in range(gw):
            o = label.offsets[i, j]
            lines.append(
                f"{i} {j} {label.coverage[i, j]:g} {int(label.dontcare[i, j])} "
                f"{o[0]:g} {o[1]:g} {o[2]:g} {o[3]:g}")
    return "\n".join(lines) + "\n"

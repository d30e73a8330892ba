"""
Box geometry: conversions, IoU / GIoU, and patch-grid coverage.

Boxes are normalised ``(cx, cy, w, h)`` with every coordinate in ``[0, 1]``
relative to the image extent. Corner form is ``(x1, y1, x2, y2)``.
"""

from dataclasses import dataclass
from typing import FrozenSet, Iterator, Tuple

import numpy as np

from yoro._errors import ValidationError
from yoro._tensor import Tensor, maximum, minimum, relu, slice_rows

Corners = Tuple[float, float, float, float]


@dataclass(frozen=True)
class Box:
    """Normalised center-size rectangle."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0.0 and self.h > 0.0):
            raise ValidationError(f"degenerate box: w={self.w}, h={self.h}",
                                  w=self.w, h=self.h)
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0
                and self.w <= 1.0 and self.h <= 1.0):
            raise ValidationError(f"box outside the unit square: {self.as_tuple()}",
                                  box=self.as_tuple())

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

    def corners(self) -> Corners:
        """Corner form, clipped to the unit square."""
        x1, y1, x2, y2 = cxcywh_to_xyxy(self.as_tuple())
        return (min(max(x1, 0.0), 1.0), min(max(y1, 0.0), 1.0),
                min(max(x2, 0.0), 1.0), min(max(y2, 0.0), 1.0))

    def area(self) -> float:
        x1, y1, x2, y2 = self.corners()
        return (x2 - x1) * (y2 - y1)

    @classmethod
    def from_corners(cls, corners: Corners) -> "Box":
        return cls(*xyxy_to_cxcywh(corners))

    @classmethod
    def from_pixels(cls, corners: Corners, width: int, height: int) -> "Box":
        """Build from pixel corners on a ``width`` x ``height`` image."""
        return cls.from_corners(pixel_to_normalized(corners, width, height))

    def to_pixels(self, width: int, height: int) -> Corners:
        return normalized_to_pixel(cxcywh_to_xyxy(self.as_tuple()), width, height)


# ---------------------------------------------------------------------
# Conversions
# ---------------------------------------------------------------------

def cxcywh_to_xyxy(box) -> Corners:
    cx, cy, w, h = (float(v) for v in box)
    if w <= 0.0 or h <= 0.0:
        raise ValidationError(f"degenerate box: w={w}, h={h}", w=w, h=h)
    return (cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


def xyxy_to_cxcywh(corners) -> Tuple[float, float, float, float]:
    x1, y1, x2, y2 = (float(v) for v in corners)
    if x2 <= x1 or y2 <= y1:
        raise ValidationError(f"degenerate corners: {(x1, y1, x2, y2)}",
                              corners=(x1, y1, x2, y2))
    return ((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)


def pixel_to_normalized(corners, width: int, height: int) -> Corners:
    x1, y1, x2, y2 = (float(v) for v in corners)
    return (x1 / width, y1 / height, x2 / width, y2 / height)


def normalized_to_pixel(corners, width: int, height: int) -> Corners:
    x1, y1, x2, y2 = (float(v) for v in corners)
    return (x1 * width, y1 * height, x2 * width, y2 * height)


# ---------------------------------------------------------------------
# Overlap measures
# ---------------------------------------------------------------------

def _intersection(a: Corners, b: Corners) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def _area(c: Corners) -> float:
    return max(c[2] - c[0], 0.0) * max(c[3] - c[1], 0.0)


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ca, cb = a.corners(), b.corners()
    inter = _intersection(ca, cb)
    union = _area(ca) + _area(cb) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: Box, b: Box) -> float:
    """Generalised IoU in ``[-1, 1]``; 0 when the union has zero area."""
    ca, cb = a.corners(), b.corners()
    inter = _intersection(ca, cb)
    union = _area(ca) + _area(cb) - inter
    if union <= 0.0:
        return 0.0
    hull = _area((min(ca[0], cb[0]), min(ca[1], cb[1]),
                  max(ca[2], cb[2]), max(ca[3], cb[3])))
    return inter / union - (hull - union) / hull


def _clip01(t: Tensor) -> Tensor:
    return minimum(maximum(t, 0.0), 1.0)


def giou_tensor(pred: Tensor, target: np.ndarray) -> Tensor:
    """
    Differentiable GIoU between a predicted ``(4,)`` cxcywh tensor and a
    constant target box.

    Both boxes are clipped to the unit square first, as :func:`giou` does,
    so the two agree for boxes that cross the image edge.
    """
    cx, cy = slice_rows(pred, 0, 1), slice_rows(pred, 1, 2)
    w, h = slice_rows(pred, 2, 3), slice_rows(pred, 3, 4)
    px1, px2 = _clip01(cx - w * 0.5), _clip01(cx + w * 0.5)
    py1, py2 = _clip01(cy - h * 0.5), _clip01(cy + h * 0.5)
    tx1, ty1, tx2, ty2 = Box(*(float(v) for v in target)).corners()

    iw = relu(minimum(px2, tx2) - maximum(px1, tx1))
    ih = relu(minimum(py2, ty2) - maximum(py1, ty1))
    inter = iw * ih
    union = (px2 - px1) * (py2 - py1) + (tx2 - tx1) * (ty2 - ty1) - inter
    hull = (maximum(px2, tx2) - minimum(px1, tx1)) * (maximum(py2, ty2) - minimum(py1, ty1))
    out = inter / union - (hull - union) / hull
    return out.sum()


# ---------------------------------------------------------------------
# Patch grid
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class PatchGrid:
    """Row-major tiling of an ``height`` x ``width`` image into ``patch`` sized squares."""

    height: int
    width: int
    patch: int

    def __post_init__(self):
        if self.patch <= 0 or self.height % self.patch or self.width % self.patch:
            raise ValidationError(
                f"patch side {self.patch} must divide image {self.height}x{self.width}",
                height=self.height, width=self.width, patch=self.patch)

    @property
    def rows(self) -> int:
        return self.height // self.patch

    @property
    def cols(self) -> int:
        return self.width // self.patch

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def cell(self, j: int) -> Corners:
        """Normalised corners of cell *j*."""
        r, c = divmod(j, self.cols)
        return (c * self.patch / self.width, r * self.patch / self.height,
                (c + 1) * self.patch / self.width, (r + 1) * self.patch / self.height)

    def cells(self) -> Iterator[Tuple[int, Corners]]:
        for j in range(self.n):
            yield j, self.cell(j)


def patch_coverage(grid: PatchGrid, box: Box, threshold: float = 0.5,
                   mode: str = "coverage") -> FrozenSet[int]:
    """
    Indices of the grid cells assigned to *box*.

    ``mode="coverage"`` keeps cells whose area is covered by the box for at
    least *threshold* (inclusive). ``mode="iou"`` applies the threshold to
    IoU(cell, box) instead.
    """
    if mode not in ("coverage", "iou"):
        raise ValidationError(f"unknown coverage mode {mode!r}", mode=mode)
    cb = box.corners()
    box_area = _area(cb)
    picked = []
    for j, cell in grid.cells():
        inter = _intersection(cell, cb)
        cell_area = _area(cell)
        if mode == "coverage":
            ratio = inter / cell_area
        else:
            ratio = inter / (cell_area + box_area - inter)
        # boundary inclusive, up to float rounding of the cell corners
        if ratio >= threshold - 1e-12:
            picked.append(j)
    return frozenset(picked)

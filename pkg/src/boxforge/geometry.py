"""Bounding-box conditioning maps: signed distance to box boundaries plus class ownership.

Every pixel gets the Euclidean distance to the nearest box boundary point
(positive inside a box, negative outside) and the class of the box owning
that nearest boundary point. Two implementations are provided: a literal
boundary-pixel enumeration used as the reference, and a closed-form
per-rectangle variant that is fast enough for large grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BoxValidationError(ValueError):
    """A bounding box does not fit the grid it annotates."""


@dataclass(frozen=True)
class BoundingBox:
    """One conditioning box: defect class id plus inclusive corner coordinates.

    ``i`` is the row index (height axis), ``j`` the column (width axis);
    ``(i_min, j_min)`` is the top-left corner and ``(i_max, j_max)`` the
    bottom-right corner, both inclusive. ``class_id`` is a defect class
    (>= 1); background never owns a box.
    """

    class_id: int
    i_min: int
    j_min: int
    i_max: int
    j_max: int

    def validate(self, height: int, width: int) -> None:
        if self.class_id < 1:
            raise BoxValidationError(f"class_id must be >= 1, got {self.class_id}")
        if not (0 <= self.i_min <= self.i_max < height):
            raise BoxValidationError(
                f"rows out of range for height {height}: i_min={self.i_min}, i_max={self.i_max}"
            )
        if not (0 <= self.j_min <= self.j_max < width):
            raise BoxValidationError(
                f"columns out of range for width {width}: j_min={self.j_min}, j_max={self.j_max}"
            )

    def contains(self, i: int, j: int) -> bool:
        """Inclusive containment; boundary pixels count as inside."""
        return self.i_min <= i <= self.i_max and self.j_min <= j <= self.j_max


@dataclass
class ConditioningMaps:
    """Paired per-pixel grids: signed boundary distance and owning class.

    ``distance`` is positive inside (or on the boundary of) at least one box
    and negative outside all of them. ``class_map`` holds the class id of the
    box whose boundary is nearest, or 0 for background; with the default
    settings it is zeroed wherever the distance is negative.
    """

    distance: np.ndarray
    class_map: np.ndarray

    @property
    def height(self) -> int:
        return self.distance.shape[0]

    @property
    def width(self) -> int:
        return self.distance.shape[1]


def no_box_sentinel(height: int, width: int) -> float:
    """Distance stored when no box exists: maximally far on this grid."""
    return -float(max(height, width))


def _validate_inputs(boxes, height, width):
    if height < 1 or width < 1:
        raise BoxValidationError(f"grid must be positive, got {height}x{width}")
    for box in boxes:
        box.validate(height, width)


def _inside_any(boxes, height, width) -> np.ndarray:
    inside = np.zeros((height, width), dtype=bool)
    for b in boxes:
        inside[b.i_min : b.i_max + 1, b.j_min : b.j_max + 1] = True
    return inside


def _boundary_points(box: BoundingBox) -> np.ndarray:
    """Integer perimeter pixels of a box, as an (N, 2) array of (i, j)."""
    pts = []
    for j in range(box.j_min, box.j_max + 1):
        pts.append((box.i_min, j))
        if box.i_max != box.i_min:
            pts.append((box.i_max, j))
    for i in range(box.i_min + 1, box.i_max):
        pts.append((i, box.j_min))
        if box.j_max != box.j_min:
            pts.append((i, box.j_max))
    return np.asarray(pts, dtype=np.float64)


def compute_maps_reference(
    boxes: list[BoundingBox],
    height: int,
    width: int,
    class_everywhere: bool = False,
) -> ConditioningMaps:
    """Boundary-enumeration computation of the conditioning maps.

    For every pixel, the distance to each box is the minimum over that box's
    rasterized perimeter pixels; boxes are scanned in list order and a box
    takes ownership of a pixel only when its boundary is strictly closer than
    the current best, so the first box wins exact ties. The sign is +1 when
    the pixel lies inside or on any box and -1 otherwise. With
    ``class_everywhere`` the nearest box's class is kept at every pixel
    instead of being zeroed outside all boxes.
    """
    _validate_inputs(boxes, height, width)

    best = np.full((height, width), np.inf, dtype=np.float64)
    class_map = np.zeros((height, width), dtype=np.int32)

    ii, jj = np.meshgrid(
        np.arange(height, dtype=np.float64),
        np.arange(width, dtype=np.float64),
        indexing="ij",
    )
    pix = np.stack([ii.ravel(), jj.ravel()], axis=1)  # (H*W, 2)

    for box in boxes:
        pts = _boundary_points(box)
        diff = pix[:, None, :] - pts[None, :, :]
        d = np.sqrt((diff**2).sum(axis=2)).min(axis=1).reshape(height, width)
        closer = d < best
        best[closer] = d[closer]
        class_map[closer] = box.class_id

    if not boxes:
        distance = np.full((height, width), no_box_sentinel(height, width))
        return ConditioningMaps(distance=distance, class_map=class_map)

    inside = _inside_any(boxes, height, width)
    distance = np.where(inside, best, -best)
    if not class_everywhere:
        class_map[~inside] = 0
    return ConditioningMaps(distance=distance, class_map=class_map)


def _box_boundary_distance(box: BoundingBox, height: int, width: int) -> np.ndarray:
    """Unsigned distance from every pixel to the box perimeter, closed form.

    Outside the box this is the distance to the clamped nearest rectangle
    point; inside it is the smallest of the four axis gaps to the sides.
    Both agree with perimeter-pixel enumeration on integer grids.
    """
    ii = np.arange(height, dtype=np.float64)[:, None]
    jj = np.arange(width, dtype=np.float64)[None, :]

    di = np.maximum(np.maximum(box.i_min - ii, ii - box.i_max), 0.0)
    dj = np.maximum(np.maximum(box.j_min - jj, jj - box.j_max), 0.0)
    outside = np.hypot(
        np.broadcast_to(di, (height, width)), np.broadcast_to(dj, (height, width))
    )

    gap = np.minimum(
        np.minimum(ii - box.i_min, box.i_max - ii),
        np.minimum(jj - box.j_min, box.j_max - jj),
    )
    inside = gap >= 0.0
    return np.where(inside, gap, outside)


def compute_maps_fast(
    boxes: list[BoundingBox],
    height: int,
    width: int,
    class_everywhere: bool = False,
) -> ConditioningMaps:
    """Closed-form equivalent of :func:`compute_maps_reference`.

    O(H*W*K) with no boundary-pixel enumeration; distances agree with the
    reference within 1e-9 and classes exactly.
    """
    _validate_inputs(boxes, height, width)

    best = np.full((height, width), np.inf, dtype=np.float64)
    class_map = np.zeros((height, width), dtype=np.int32)

    for box in boxes:
        d = _box_boundary_distance(box, height, width)
        closer = d < best
        best[closer] = d[closer]
        class_map[closer] = box.class_id

    if not boxes:
        distance = np.full((height, width), no_box_sentinel(height, width))
        return ConditioningMaps(distance=distance, class_map=class_map)

    inside = _inside_any(boxes, height, width)
    distance = np.where(inside, best, -best)
    if not class_everywhere:
        class_map[~inside] = 0
    return ConditioningMaps(distance=distance, class_map=class_map)


def normalize_distance(maps: ConditioningMaps, height: int, width: int) -> np.ndarray:
    """Scale distances into [-1, 1] by dividing by max(height, width).

    Monotone and sign-preserving; the no-box sentinel maps to -1 exactly and
    anything beyond the scale is clamped.
    """
    d_max = float(max(height, width))
    return np.clip(maps.distance / d_max, -1.0, 1.0)

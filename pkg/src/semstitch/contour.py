"""Closed outer-boundary tracing of tissue masks and arc-length walking.

The boundary is traced with Moore neighbor following (equivalent to the
classic border-following outer contour): an ordered closed chain of border
pixels in which consecutive points are 8-neighbors.  The walk visits every
tissue pixel that has a non-tissue 4-neighbor; pixels whose only background
contact is diagonal are corner-cut, as in any 8-connected border follower.
Chains are oriented so their shoelace signed area is positive and start at
the topmost-then-leftmost border pixel, which makes traces canonical and
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import NoTissueError

# neighbor offsets in clockwise screen order starting West (x right, y down)
_DX = (-1, -1, 0, 1, 1, 1, 0, -1)
_DY = (0, -1, -1, -1, 0, 1, 1, 1)
_DIR_INDEX = {(_DX[i], _DY[i]): i for i in range(8)}


@dataclass
class BoundaryChain:
    """Closed 8-connected pixel contour, positively oriented.

    ``points`` is an ``(n, 2)`` integer array of (x, y) coordinates.  The
    chain is implicitly closed: the last point neighbors the first.
    Signed area is positive for any chain of more than two points
    (degenerate one- and two-point chains have zero area).
    """

    points: np.ndarray

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        if len(self.points) == 0:
            raise ValueError("empty boundary chain")

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def step_lengths(self) -> np.ndarray:
        """Euclidean length of each step i -> i+1 (wrapping), 1 or sqrt(2)."""
        diffs = np.roll(self.points, -1, axis=0) - self.points
        return np.hypot(diffs[:, 0], diffs[:, 1])

    @cached_property
    def cumulative(self) -> np.ndarray:
        """cumulative[i] = arc length from point 0 to point i; [n] = perimeter."""
        return np.concatenate([[0.0], np.cumsum(self.step_lengths)])

    @property
    def perimeter(self) -> float:
        return float(self.cumulative[-1])

    def signed_area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        x1, y1 = np.roll(x, -1), np.roll(y, -1)
        return 0.5 * float(np.sum(x * y1 - x1 * y))


def _moore_trace(comp: np.ndarray, sx: int, sy: int) -> list[tuple[int, int]]:
    """Trace the outer border of a padded component starting at (sx, sy).

    Stops when the initial (start -> second point) transition repeats
    (Jacob's criterion), so every boundary cycle terminates even on one-
    pixel-wide spurs.
    """
    start = (sx, sy)
    prev = (sx - 1, sy)  # West of the topmost-leftmost pixel is background
    curr = start
    chain: list[tuple[int, int]] = []
    first_transition = None
    while True:
        base = _DIR_INDEX[(prev[0] - curr[0], prev[1] - curr[1])]
        nxt = None
        for k in range(1, 9):
            i = (base + k) % 8
            cand = (curr[0] + _DX[i], curr[1] + _DY[i])
            if comp[cand[1], cand[0]]:
                nxt = cand
                backtrack = (curr[0] + _DX[(base + k - 1) % 8], curr[1] + _DY[(base + k - 1) % 8])
                break
        if nxt is None:
            return [start]  # isolated pixel
        transition = (curr, nxt)
        if first_transition is None:
            first_transition = transition
        elif transition == first_transition:
            break
        chain.append(curr)
        prev = backtrack
        curr = nxt
    return chain


def _canonical(points: list[tuple[int, int]]) -> BoundaryChain:
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    chain = BoundaryChain(pts)
    if len(pts) > 2 and chain.signed_area() < 0:
        pts = pts[::-1]
    order = np.lexsort((pts[:, 0], pts[:, 1]))  # topmost, then leftmost
    pts = np.roll(pts, -int(order[0]), axis=0)
    return BoundaryChain(pts)


def _trace_one(mask: np.ndarray, labels: np.ndarray, label: int) -> BoundaryChain:
    comp = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), dtype=bool)
    comp[1:-1, 1:-1] = labels == label
    ys, xs = np.nonzero(comp)
    sy = ys.min()
    sx = xs[ys == sy].min()
    raw = _moore_trace(comp, int(sx), int(sy))
    return _canonical([(x - 1, y - 1) for x, y in raw])


def trace_boundary(mask: np.ndarray) -> BoundaryChain:
    """Outer contour of the largest connected tissue component."""
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        raise NoTissueError("empty mask")
    areas = np.bincount(labels.ravel())
    areas[0] = 0
    return _trace_one(mask, labels, int(np.argmax(areas)))


def trace_component_boundaries(mask: np.ndarray, min_area: int = 1) -> list[BoundaryChain]:
    """Outer contours of every component with at least ``min_area`` pixels.

    Returned in scan order (label order), which is deterministic.  Used for
    merged composites whose tissue may be split by removed gap strips.
    """
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        raise NoTissueError("empty mask")
    areas = np.bincount(labels.ravel())
    return [
        _trace_one(mask, labels, label)
        for label in range(1, n + 1)
        if areas[label] >= min_area
    ]


def point_at_arclength(
    chain: BoundaryChain, start_index: int, distance: float
) -> tuple[np.ndarray, int]:
    """First chain point at cumulative arc length >= ``distance`` from start.

    Walks forward along the closed chain accumulating Euclidean step lengths
    (1 or sqrt(2)); distances beyond the perimeter wrap around.  Returns the
    point and its chain index.
    """
    if distance < 0:
        raise ValueError("distance must be >= 0")
    n = len(chain)
    start_index = int(start_index) % n
    perim = chain.perimeter
    if perim == 0.0:  # single-point chain
        return chain.points[start_index].copy(), start_index
    if distance >= perim:
        distance = distance % perim
    cum = chain.cumulative
    base = cum[start_index]
    # arc from start to start+m, for m in 0..n (wrapping once)
    arcs = np.concatenate([cum[start_index:] - base, perim - base + cum[1 : start_index + 1]])
    m = int(np.searchsorted(arcs, distance, side="left"))
    idx = (start_index + m) % n
    return chain.points[idx].copy(), idx

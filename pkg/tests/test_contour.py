import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semstitch import NoTissueError
from semstitch.contour import (
    BoundaryChain,
    point_at_arclength,
    trace_boundary,
    trace_component_boundaries,
)


def square_mask(size=10, at=(5, 5), canvas=30):
    m = np.zeros((canvas, canvas), dtype=bool)
    m[at[1] : at[1] + size, at[0] : at[0] + size] = True
    return m


def border_pixels(mask):
    """Oracle: tissue pixels with at least one non-tissue 4-neighbor.

    This is exactly the set an outer border-following walk visits; pixels
    whose only background contact is diagonal are corner-cut by the walk.
    """
    padded = np.pad(mask, 1)
    out = set()
    ys, xs = np.nonzero(mask)
    for x, y in zip(xs, ys):
        if not (padded[y + 1, x + 2] and padded[y + 1, x] and padded[y + 2, x + 1] and padded[y, x + 1]):
            out.add((x, y))
    return out


def border_pixels_8(mask):
    """Tissue pixels with at least one non-tissue 8-neighbor (superset)."""
    padded = np.pad(mask, 1)
    out = set()
    ys, xs = np.nonzero(mask)
    for x, y in zip(xs, ys):
        if not padded[y : y + 3, x : x + 3].all():
            out.add((x, y))
    return out


def blob_mask(seed, size=96):
    """Smooth star-shaped blob; no one-pixel spurs."""
    rng = np.random.default_rng(seed)
    c = size / 2
    base = size * rng.uniform(0.22, 0.3)
    coeffs = rng.uniform(-0.1, 0.1, 5)
    phases = rng.uniform(0, 2 * np.pi, 5)
    yy, xx = np.mgrid[0:size, 0:size]
    theta = np.arctan2(yy - c, xx - c)
    r = np.hypot(xx - c, yy - c)
    radius = base * (1 + sum(a * np.cos((k + 2) * theta + p) for k, (a, p) in enumerate(zip(coeffs, phases))))
    return r <= radius


class TestTraceBoundary:
    def test_square_perimeter_pixels(self):
        mask = square_mask(10, (5, 5))
        chain = trace_boundary(mask)
        # 10x10 filled square has 36 distinct perimeter pixels
        assert len(chain) == 36
        got = {tuple(p) for p in chain.points}
        expect = border_pixels(mask)
        assert got == expect
        # consecutive points (incl. wrap) are 8-neighbors
        diffs = np.abs(np.roll(chain.points, -1, axis=0) - chain.points)
        assert diffs.max() == 1

    def test_single_pixel(self):
        m = np.zeros((5, 5), dtype=bool)
        m[2, 3] = True
        chain = trace_boundary(m)
        assert len(chain) == 1
        assert chain.points.tolist() == [[3, 2]]
        assert chain.perimeter == 0.0

    def test_largest_component_wins(self):
        m = np.zeros((40, 40), dtype=bool)
        m[5:15, 5:15] = True  # area 100
        m[25:28, 25:28] = True  # area 9
        chain = trace_boundary(m)
        assert {tuple(p) for p in chain.points} == border_pixels(square_mask(10, (5, 5), 40))

    def test_empty_mask_raises(self):
        with pytest.raises(NoTissueError):
            trace_boundary(np.zeros((5, 5), dtype=bool))

    def test_canonical_start_and_orientation(self):
        chain = trace_boundary(square_mask(6, (4, 7)))
        assert chain.points[0].tolist() == [4, 7]  # topmost then leftmost
        assert chain.signed_area() > 0

    def test_component_boundaries_all_components(self):
        m = np.zeros((40, 40), dtype=bool)
        m[2:10, 2:10] = True
        m[20:30, 20:30] = True
        chains = trace_component_boundaries(m)
        assert len(chains) == 2
        assert sum(len(c) for c in chains) == 28 + 36

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6))
    def test_blob_properties(self, seed):
        mask = blob_mask(seed)
        chain = trace_boundary(mask)
        got = [tuple(p) for p in chain.points]
        # each walkable border pixel appears exactly once
        expect = border_pixels(mask)
        assert set(got) == expect
        assert len(got) == len(expect)
        # and every chain point is on the 8-neighbor outer border
        assert set(got) <= border_pixels_8(mask)
        assert chain.signed_area() > 0


class TestPointAtArclength:
    def test_distance_zero_identity(self):
        chain = trace_boundary(square_mask())
        p, i = point_at_arclength(chain, 3, 0.0)
        assert i == 3 and p.tolist() == chain.points[3].tolist()

    def test_walk_along_edge(self):
        chain = trace_boundary(square_mask(10, (5, 5)))
        start = int(np.nonzero((chain.points == [5, 5]).all(axis=1))[0][0])
        p, _ = point_at_arclength(chain, start, 5.0)
        # corner (5,5): positively-oriented walk moves along one axis 5 px
        assert sorted(np.abs(p - [5, 5]).tolist()) == [0, 5]

    def test_wraps_modulo_perimeter(self):
        chain = trace_boundary(square_mask())
        p0, i0 = point_at_arclength(chain, 7, 2.0)
        p1, i1 = point_at_arclength(chain, 7, 2.0 + chain.perimeter)
        assert i0 == i1 and np.array_equal(p0, p1)

    def test_full_perimeter_returns_start(self):
        chain = trace_boundary(square_mask())
        for s in (0, 5, len(chain) - 1):
            p, i = point_at_arclength(chain, s, chain.perimeter)
            assert i == s and np.array_equal(p, chain.points[s])

    def test_negative_distance_rejected(self):
        chain = trace_boundary(square_mask())
        with pytest.raises(ValueError):
            point_at_arclength(chain, 0, -1.0)

    def test_diagonal_steps_counted_sqrt2(self):
        pts = [(1, 0), (2, 1), (1, 2), (0, 1)]  # diamond, all diagonal steps
        chain = BoundaryChain(np.array(pts))
        assert chain.perimeter == pytest.approx(4 * np.sqrt(2))
        p, i = point_at_arclength(chain, 0, np.sqrt(2))
        assert i == 1

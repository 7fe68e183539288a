import numpy as np
import pytest

from semstitch import Raster
from semstitch.contour import trace_boundary
from semstitch.patchex import (
    INWARD_SHIFT,
    PatchFrame,
    extract,
    frame_anchor,
    plan_frames,
)


def rect_mask(w, h, x0, y0, rw, rh):
    m = np.zeros((h, w), dtype=bool)
    m[y0 : y0 + rh, x0 : x0 + rw] = True
    return m


class TestPlanFrames:
    def test_too_small_perimeter_empty(self):
        mask = rect_mask(80, 80, 20, 20, 26, 26)  # perimeter 100 < 224
        chain = trace_boundary(mask)
        assert chain.perimeter == pytest.approx(100)
        assert plan_frames(chain, mask, patch_size=224) == []

    def test_straight_edge_geometry(self):
        # tall rectangle: vertical edges dominate; patch 64, stride 32
        mask = rect_mask(400, 400, 50, 10, 300, 380)
        chain = trace_boundary(mask)
        frames = plan_frames(chain, mask, patch_size=64, stride=32)
        assert frames
        # frames on the left edge x=50: tangent vertical, normal +x (into tissue)
        left = [f for f in frames if abs(frame_anchor(f)[0] - 50) < 1.0 and 100 < frame_anchor(f)[1] < 300]
        assert left
        for f in left:
            assert abs(abs(f.tangent[1]) - 1.0) < 1e-6
            assert f.normal @ np.array([1.0, 0.0]) > 0.99
            assert np.allclose(f.center, frame_anchor(f) + (INWARD_SHIFT + 32) * f.normal)

    def test_orthonormal_frames(self):
        mask = rect_mask(600, 600, 100, 100, 400, 400)
        chain = trace_boundary(mask)
        for f in plan_frames(chain, mask, patch_size=128):
            assert abs(np.linalg.norm(f.tangent) - 1) < 1e-6
            assert abs(np.linalg.norm(f.normal) - 1) < 1e-6
            assert abs(f.tangent @ f.normal) < 1e-6

    def test_frame_count_vs_perimeter(self):
        mask = rect_mask(1100, 1100, 50, 50, 1000, 1000)
        chain = trace_boundary(mask)
        frames = plan_frames(chain, mask, patch_size=224, stride=112)
        expect = chain.perimeter / 112
        assert abs(len(frames) - expect) <= 1

    def test_anchor_spacing(self):
        mask = rect_mask(900, 900, 100, 100, 700, 700)
        chain = trace_boundary(mask)
        frames = plan_frames(chain, mask, patch_size=224, stride=112)
        pos = {tuple(p): i for i, p in enumerate(chain.points.tolist())}
        cum = chain.cumulative
        arcs = [cum[f.boundary_index] for f in frames]
        gaps = np.diff(arcs)
        assert np.all(gaps >= 112 - 1e-9) and np.all(gaps <= 112 + np.sqrt(2) + 1e-9)

    def test_normals_point_to_centroid_convex(self):
        mask = rect_mask(800, 800, 150, 200, 500, 400)
        chain = trace_boundary(mask)
        centroid = np.array([150 + 250, 200 + 200], dtype=float)
        for f in plan_frames(chain, mask, patch_size=96):
            assert f.normal @ (centroid - frame_anchor(f)) > 0

    def test_mostly_offcanvas_frames_dropped(self):
        # tissue flush against the canvas edge: frames on that edge fall outside
        mask = np.zeros((300, 300), dtype=bool)
        mask[0:120, 0:300] = True
        chain = trace_boundary(mask)
        frames = plan_frames(chain, mask, patch_size=200, stride=50)
        for f in frames:
            assert 0 <= f.center[0] <= 299 and 0 <= f.center[1] <= 299


class TestExtract:
    def test_axis_aligned_equals_crop(self):
        rng = np.random.default_rng(0)
        img = Raster(rng.integers(0, 256, (200, 200), dtype=np.uint8), 1.0)
        size = 64
        x0, y0 = 30, 40
        frame = PatchFrame(
            center=np.array([x0 + (size - 1) / 2, y0 + (size - 1) / 2]),
            tangent=np.array([1.0, 0.0]),
            normal=np.array([0.0, 1.0]),
            size=size,
            boundary_index=0,
        )
        patch = extract(img, frame)
        assert np.array_equal(patch.pixels, img.pixels[y0 : y0 + size, x0 : x0 + size])

    def test_90deg_rotation_matches_rot90(self):
        rng = np.random.default_rng(1)
        img = Raster(rng.integers(0, 256, (200, 200), dtype=np.uint8), 1.0)
        size = 64
        c = np.array([99.5, 99.5])
        base = PatchFrame(c, np.array([1.0, 0.0]), np.array([0.0, 1.0]), size, 0)
        # tangent rotated +90deg in (x, y): (1,0) -> (0,1); normal (0,1) -> (-1,0)
        rot = PatchFrame(c, np.array([0.0, 1.0]), np.array([-1.0, 0.0]), size, 0)
        p0 = extract(img, base).pixels.astype(int)
        p90 = extract(img, rot).pixels.astype(int)
        # rot frame samples img[cy+u, cx-v] == p0[j, size-1-i] == rot90(p0, 1)
        assert np.abs(np.rot90(p0, 1) - p90).max() <= 1

    def test_half_offcanvas_filled_white(self):
        img = Raster(np.zeros((100, 100), dtype=np.uint8), 1.0)
        size = 40
        frame = PatchFrame(
            center=np.array([0.0, 50.0]),  # half the square hangs off the left
            tangent=np.array([1.0, 0.0]),
            normal=np.array([0.0, 1.0]),
            size=size,
            boundary_index=0,
        )
        patch = extract(img, frame)
        assert (patch.pixels[:, : size // 2 - 1] == 255).all()
        assert (patch.pixels[:, size // 2 + 1 :] == 0).all()

    def test_rgb_patch_shape(self):
        img = Raster(np.zeros((64, 64, 3), dtype=np.uint8), 1.0)
        frame = PatchFrame(np.array([31.5, 31.5]), np.array([1.0, 0.0]), np.array([0.0, 1.0]), 16, 0)
        assert extract(img, frame).pixels.shape == (16, 16, 3)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(2)
        base = rng.integers(0, 256, (160, 160), dtype=np.uint8)
        img = Raster(base, 1.0)
        img_rot = Raster(np.rot90(base, 1).copy(), 1.0)  # (x,y) -> (y, W-1-x)
        size = 48
        c = np.array([80.0, 70.0])
        t = np.array([np.cos(0.4), np.sin(0.4)])
        n = np.array([-np.sin(0.4), np.cos(0.4)])
        frame = PatchFrame(c, t, n, size, 0)
        w = base.shape[1]
        rot_pt = lambda p: np.array([p[1], w - 1 - p[0]])
        rot_vec = lambda v: np.array([v[1], -v[0]])
        frame_rot = PatchFrame(rot_pt(c), rot_vec(t), rot_vec(n), size, 0)
        p0 = extract(img, frame).pixels.astype(int)
        p1 = extract(img_rot, frame_rot).pixels.astype(int)
        assert np.abs(p0 - p1).max() <= 2

import json
import math

import numpy as np
import pytest

from semstitch import (
    FragmentTooSmallError,
    NoTissueError,
    Raster,
    RigidTransform,
    RunConfig,
    render_composite,
    stitch,
)
from semstitch.harness import (
    FragmentationSpec,
    OracleOriginEncoder,
    fragment_slide,
    synthetic_tissue,
)
from semstitch.mosaic import (
    Fragment,
    prepare_fragment_raster,
    scale_pose,
    warp_rigid_region,
)


@pytest.fixture(scope="module")
def small_cfg():
    return RunConfig(processing_mpp=1.0, output_mpp=1.0, patch_size=64,
                     min_component_area=256)


@pytest.fixture(scope="module")
def slide_and_split():
    slide, _ = synthetic_tissue(11, 768)
    spec = FragmentationSpec(layout="halves", seed=11)
    fragments, gt = fragment_slide(slide, spec, patch_size=64)
    return slide, fragments, gt


class TestScalePose:
    def test_identity_ratio(self):
        pose = RigidTransform.from_angle(0.3, (10.0, -4.0))
        out = scale_pose(pose, 1.0)
        assert np.allclose(out.rotation, pose.rotation)
        assert np.allclose(out.translation, pose.translation)

    def test_translation_only_scales_linearly(self):
        pose = RigidTransform.from_angle(0.0, (10.0, -4.0))
        out = scale_pose(pose, 4.0)
        assert np.allclose(out.translation, [40.0, -16.0])

    def test_round_trip_inverse(self):
        pose = RigidTransform.from_angle(-1.2, (33.0, 7.5))
        back = scale_pose(scale_pose(pose, 4.0), 0.25)
        assert np.allclose(back.translation, pose.translation, atol=1e-12)

    def test_consistent_with_pixel_center_convention(self):
        # physical point of pixel p at mpp m is (p + 0.5) * m per axis;
        # the scaled pose must commute with that conversion
        pose = RigidTransform.from_angle(0.7, (12.0, -9.0))
        ratio = 4.0
        out = scale_pose(pose, ratio)
        rng = np.random.default_rng(0)
        pts_fine = rng.uniform(0, 400, (10, 2))
        pts_coarse = (pts_fine + 0.5) / ratio - 0.5
        mapped_coarse = pose.apply(pts_coarse)
        expected_fine = (mapped_coarse + 0.5) * ratio - 0.5
        assert np.allclose(out.apply(pts_fine), expected_fine, atol=1e-9)


class TestWarp:
    def test_identity_warp(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, (40, 50), dtype=np.uint8).astype(np.float64)
        out = warp_rigid_region(img, RigidTransform.identity(), 0, 0, 50, 40)
        assert np.allclose(out, img)

    def test_pure_translation(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, (30, 30), dtype=np.uint8).astype(np.float64)
        t = RigidTransform.from_angle(0.0, (5.0, 3.0))
        out = warp_rigid_region(img, t, 5, 3, 30, 30)
        assert np.allclose(out, img)


class TestPrepareFragment:
    def test_contract(self, small_cfg, slide_and_split):
        _, fragments, gt = slide_and_split
        enc = OracleOriginEncoder(gt, sigma=0.0)
        fid, raster = fragments[0]
        frag = prepare_fragment_raster(raster, fid, small_cfg, encoder=enc)
        assert len(frag.frames) >= 1
        assert len(frag.frames) == len(frag.features)
        assert frag.features.shape[1] == enc.k
        assert frag.boundary_points is not None and len(frag.boundary_points) > 100

    def test_blank_image_raises(self, small_cfg):
        blank = Raster(np.full((256, 256), 255, dtype=np.uint8), 1.0)
        with pytest.raises(NoTissueError):
            prepare_fragment_raster(blank, "blank", small_cfg)

    def test_tiny_tissue_raises(self, small_cfg):
        px = np.full((400, 400), 255, dtype=np.uint8)
        px[100:112, 100:112] = 50  # 12x12 blob: perimeter 44 < patch size 64
        cfg = small_cfg.with_updates(min_component_area=64)
        with pytest.raises(FragmentTooSmallError):
            prepare_fragment_raster(Raster(px, 1.0), "tiny", cfg)

    def test_deterministic_features(self, small_cfg, slide_and_split):
        _, fragments, _ = slide_and_split
        fid, raster = fragments[0]
        a = prepare_fragment_raster(raster, fid, small_cfg)
        b = prepare_fragment_raster(raster, fid, small_cfg)
        assert np.array_equal(a.features, b.features)


class TestStitch:
    def test_single_fragment_identity(self, small_cfg, slide_and_split):
        _, fragments, gt = slide_and_split
        enc = OracleOriginEncoder(gt, sigma=0.0)
        fid, raster = fragments[0]
        frag = prepare_fragment_raster(raster, fid, small_cfg, encoder=enc)
        composite, manifest = stitch([frag], small_cfg, encoder=enc)
        assert manifest["status"] == "complete"
        assert len(manifest["fragments"]) == 1
        row = manifest["fragments"][0]
        assert row["theta_deg"] == pytest.approx(0.0, abs=1e-9)
        assert manifest["merges"] == []

    def test_two_fragment_roundtrip(self, small_cfg, slide_and_split):
        from semstitch.harness import desk_ransac

        slide, fragments, gt = slide_and_split
        enc = OracleOriginEncoder(gt, sigma=0.0)
        cfg = small_cfg.with_updates(ransac=desk_ransac(small_cfg))
        pool = [
            prepare_fragment_raster(r, fid, cfg, encoder=enc)
            for fid, r in fragments
        ]
        composite, manifest = stitch(pool, cfg, encoder=enc)
        assert manifest["status"] == "complete"
        # recovered relative pose vs ground truth
        rows = {r["id"]: r for r in manifest["fragments"]}
        poses = {
            fid: RigidTransform.from_angle(math.radians(r["theta_deg"]), (r["tx"], r["ty"]))
            for fid, r in rows.items()
        }
        a, b = sorted(poses)
        est = poses[a].inverse().compose(poses[b])
        true = gt.poses[a].inverse().compose(gt.poses[b])
        dtheta = abs(est.theta_deg - true.theta_deg)
        w, h = gt.sizes[b]
        center = np.array([(w - 1) / 2, (h - 1) / 2])
        dpos = np.linalg.norm(est.apply(center) - true.apply(center))
        assert dtheta <= 0.5
        assert dpos <= 2.0

    def test_manifest_contains_each_fragment_once(self, small_cfg, slide_and_split):
        _, fragments, gt = slide_and_split
        enc = OracleOriginEncoder(gt, sigma=0.0)
        pool = [
            prepare_fragment_raster(r, fid, small_cfg, encoder=enc)
            for fid, r in fragments
        ]
        _, manifest = stitch(pool, small_cfg, encoder=enc)
        ids = [r["id"] for r in manifest["fragments"]]
        assert sorted(ids) == sorted(fid for fid, _ in fragments)

    def test_manifest_deterministic(self, small_cfg, slide_and_split):
        _, fragments, gt = slide_and_split
        enc = OracleOriginEncoder(gt, sigma=0.0)
        manifests = []
        for _ in range(2):
            pool = [
                prepare_fragment_raster(r, fid, small_cfg, encoder=enc)
                for fid, r in fragments
            ]
            _, manifest = stitch(pool, small_cfg, encoder=enc)
            manifests.append(json.dumps(manifest, sort_keys=True))
        assert manifests[0] == manifests[1]

    def test_duplicate_ids_rejected(self, small_cfg, slide_and_split):
        _, fragments, gt = slide_and_split
        enc = OracleOriginEncoder(gt, sigma=0.0)
        fid, raster = fragments[0]
        frag = prepare_fragment_raster(raster, fid, small_cfg, encoder=enc)
        with pytest.raises(ValueError):
            stitch([frag, frag], small_cfg, encoder=enc)

    def test_pool_shrinks_by_one_per_merge(self, small_cfg, slide_and_split):
        _, fragments, gt = slide_and_split
        enc = OracleOriginEncoder(gt, sigma=0.0)
        pool = [
            prepare_fragment_raster(r, fid, small_cfg, encoder=enc)
            for fid, r in fragments
        ]
        _, manifest = stitch(pool, small_cfg, encoder=enc)
        ok_merges = [m for m in manifest["merges"] if m["status"] == "ok"]
        assert len(ok_merges) == len(pool) - 1


class TestRenderComposite:
    def make_fragment(self, px, pose, mpp=1.0):
        mask = px < 250 if px.ndim == 2 else (px < 250).any(axis=2)
        return Fragment(
            id="f", image=Raster(px, mpp), full_res_image=None, mask=mask,
            frames=[], features=np.zeros((0, 8), dtype=np.float32), pose=pose,
        )

    def test_identity_render_crop_matches(self):
        rng = np.random.default_rng(3)
        px = np.full((60, 80), 255, dtype=np.uint8)
        px[10:50, 15:70] = rng.integers(0, 200, (40, 55))
        frag = self.make_fragment(px, RigidTransform.identity())
        out = render_composite([frag], out_mpp=1.0, margin=16)
        crop = out.pixels[16 : 16 + 60, 16 : 16 + 80]
        assert np.array_equal(crop, px)

    def test_two_disjoint_fragments(self):
        a = np.full((40, 40), 255, dtype=np.uint8)
        a[5:35, 5:35] = 10
        b = np.full((40, 40), 255, dtype=np.uint8)
        b[5:35, 5:35] = 200
        fa = self.make_fragment(a, RigidTransform.identity())
        fb = self.make_fragment(b, RigidTransform.from_angle(0.0, (100.0, 0.0)))
        fb.id = "g"
        out = render_composite([fa, fb], out_mpp=1.0)
        vals = set(np.unique(out.pixels).tolist())
        assert {10, 200, 255} <= vals

    def test_rotated_render_matches_rot90(self):
        rng = np.random.default_rng(4)
        px = np.full((64, 64), 255, dtype=np.uint8)
        px[8:56, 8:56] = rng.integers(0, 200, (48, 48))
        # pose: rotate +90deg about the image center
        c = (64 - 1) / 2.0
        rot = RigidTransform.from_angle(math.pi / 2)
        pose = RigidTransform.from_angle(math.pi / 2, np.array([c, c]) - rot.rotation @ [c, c])
        out = render_composite([self.make_fragment(px, pose)], out_mpp=1.0, margin=16)
        crop = out.pixels[16 : 16 + 64, 16 : 16 + 64].astype(int)
        expect = np.rot90(px, -1).astype(int)  # (x,y)->(-y,x) is rot90(k=-1) on arrays
        interior = np.s_[10:54, 10:54]
        assert np.abs(crop[interior] - expect[interior]).max() <= 2

    def test_canvas_budget(self):
        px = np.full((40, 40), 0, dtype=np.uint8)
        frag = self.make_fragment(px, RigidTransform.identity())
        from semstitch import CanvasBudgetError

        with pytest.raises(CanvasBudgetError):
            render_composite([frag], out_mpp=1.0, max_pixels=100)

    def test_output_mpp_scaling(self):
        px = np.full((64, 64), 255, dtype=np.uint8)
        px[16:48, 16:48] = 50
        frag = self.make_fragment(px, RigidTransform.from_angle(0.0, (10.0, 20.0)), mpp=1.0)
        out = render_composite([frag], out_mpp=0.5, margin=8)
        assert out.mpp == 0.5
        # tissue block doubles in size at half the mpp
        dark = (out.pixels < 128).sum()
        assert abs(dark - 32 * 32 * 4) <= 4 * 64 * 4

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semstitch import DegenerateSampleError, NoConsensusError
from semstitch.align import RansacConfig, RigidTransform, fit_rigid, ransac_rigid


def grid_search_theta(src, dst, step_deg=0.01):
    """Oracle: brute-force theta at fixed resolution with closed-form t."""
    best = (np.inf, None, None)
    sc, dc = src.mean(0), dst.mean(0)
    a, b = src - sc, dst - dc
    for theta in np.arange(-180.0, 180.0, step_deg):
        r = math.radians(theta)
        rot = np.array([[math.cos(r), -math.sin(r)], [math.sin(r), math.cos(r)]])
        resid = float(((a @ rot.T - b) ** 2).sum())
        if resid < best[0]:
            t = dc - rot @ sc
            best = (resid, theta, t)
    return best[1], best[2]


class TestRigidTransform:
    def test_identity(self):
        t = RigidTransform.identity()
        pts = np.array([[1.0, 2.0], [3.0, -4.0]])
        assert np.allclose(t.apply(pts), pts)

    def test_compose_inverse(self):
        a = RigidTransform.from_angle(0.3, (5, -2))
        b = RigidTransform.from_angle(-1.1, (0.5, 9))
        p = np.array([2.0, 7.0])
        assert np.allclose(a.compose(b).apply(p), a.apply(b.apply(p)))
        assert np.allclose(a.compose(a.inverse()).apply(p), p, atol=1e-12)

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidTransform(np.array([[1.0, 0.0], [0.0, -1.0]]), np.zeros(2))

    def test_orthogonality_enforced(self):
        with pytest.raises(ValueError):
            RigidTransform(np.array([[1.0, 0.1], [0.0, 1.0]]), np.zeros(2))

    def test_theta_roundtrip(self):
        t = RigidTransform.from_angle(math.radians(33.0))
        assert t.theta_deg == pytest.approx(33.0, abs=1e-12)


class TestFitRigid:
    def test_identity_recovery(self):
        rng = np.random.default_rng(0)
        src = rng.uniform(0, 100, (10, 2))
        t = fit_rigid(src, src)
        assert abs(t.theta) < 1e-12
        assert np.allclose(t.translation, 0, atol=1e-9)

    def test_exact_recovery_90deg(self):
        rng = np.random.default_rng(1)
        src = rng.uniform(-50, 50, (8, 2))
        true = RigidTransform.from_angle(math.pi / 2, (5.0, 7.0))
        fit = fit_rigid(src, true.apply(src))
        assert fit.theta_deg == pytest.approx(90.0, abs=1e-9)
        assert np.allclose(fit.translation, [5.0, 7.0], atol=1e-9)

    def test_noisy_matches_grid_oracle(self):
        rng = np.random.default_rng(2)
        src = rng.uniform(0, 500, (20, 2))
        true = RigidTransform.from_angle(math.radians(33.0), (12.0, -4.0))
        dst = true.apply(src) + rng.normal(0, 1.0, src.shape)
        fit = fit_rigid(src, dst)
        theta_o, t_o = grid_search_theta(src, dst)
        assert abs(fit.theta_deg - theta_o) <= 0.5
        assert np.linalg.norm(fit.translation - t_o) <= 1.0

    def test_degenerate_raises(self):
        src = np.ones((5, 2))
        dst = np.random.default_rng(3).uniform(0, 10, (5, 2))
        with pytest.raises(DegenerateSampleError):
            fit_rigid(src, dst)

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            fit_rigid(np.zeros((3, 2)), np.zeros((4, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-np.pi, np.pi), st.integers(0, 2**31 - 1))
    def test_exact_recovery_any_angle(self, theta, seed):
        rng = np.random.default_rng(seed)
        src = rng.uniform(-100, 100, (6, 2))
        if np.abs(src - src.mean(0)).max() < 1e-6:
            return
        true = RigidTransform.from_angle(theta, rng.uniform(-20, 20, 2))
        fit = fit_rigid(src, true.apply(src))
        assert np.allclose(fit.rotation, true.rotation, atol=1e-9)
        assert np.allclose(fit.translation, true.translation, atol=1e-7)


class TestRansac:
    def test_all_consistent(self):
        rng = np.random.default_rng(4)
        src = rng.uniform(0, 1000, (40, 2))
        true = RigidTransform.from_angle(math.radians(12.0), (100.0, -30.0))
        model, mask = ransac_rigid(src, true.apply(src), RansacConfig(seed=0))
        assert mask.all()
        assert model.theta_deg == pytest.approx(12.0, abs=1e-9)
        assert np.allclose(model.translation, [100.0, -30.0], atol=1e-6)

    def test_too_few_matches(self):
        src = np.random.default_rng(5).uniform(0, 10, (5, 2))
        with pytest.raises(NoConsensusError):
            ransac_rigid(src, src, RansacConfig(sample_size=6))

    def test_contaminated_recovery(self):
        rng = np.random.default_rng(6)
        n, n_out = 100, 30
        src = rng.uniform(0, 30000, (n, 2))
        true = RigidTransform.from_angle(math.radians(-20.0), (800.0, 1500.0))
        dst = true.apply(src)
        out_idx = rng.choice(n, size=n_out, replace=False)
        dst[out_idx] = rng.uniform(0, 30000, (n_out, 2))
        model, mask = ransac_rigid(src, dst, RansacConfig(seed=1))
        assert abs(model.theta_deg - (-20.0)) <= 0.5
        assert np.linalg.norm(model.translation - [800.0, 1500.0]) <= 2.0

    def test_seed_reproducibility(self):
        rng = np.random.default_rng(7)
        src = rng.uniform(0, 5000, (50, 2))
        dst = RigidTransform.from_angle(0.2, (10, 10)).apply(src)
        dst[:15] = rng.uniform(0, 5000, (15, 2))
        cfg = RansacConfig(seed=99)
        m1, mask1 = ransac_rigid(src, dst, cfg)
        m2, mask2 = ransac_rigid(src, dst, RansacConfig(seed=99))
        assert np.array_equal(mask1, mask2)
        assert np.array_equal(m1.rotation, m2.rotation)
        assert np.array_equal(m1.translation, m2.translation)

    def test_no_consensus_error(self):
        rng = np.random.default_rng(8)
        src = rng.uniform(0, 100000, (20, 2))
        dst = rng.uniform(0, 100000, (20, 2))
        with pytest.raises(NoConsensusError):
            ransac_rigid(src, dst, RansacConfig(min_inliers=18, seed=2))

    def test_inlier_maximality(self):
        # returned mask count must match the best model refit consensus bound
        rng = np.random.default_rng(9)
        src = rng.uniform(0, 20000, (60, 2))
        true = RigidTransform.from_angle(0.5, (300, -100))
        dst = true.apply(src)
        dst[:20] = rng.uniform(0, 20000, (20, 2))
        model, mask = ransac_rigid(src, dst, RansacConfig(seed=3))
        assert mask.sum() >= 40

    @settings(max_examples=15, deadline=None)
    @given(st.floats(-3.0, 3.0))
    def test_equivariance_prerotation(self, q):
        rng = np.random.default_rng(10)
        src = rng.uniform(0, 2000, (30, 2))
        true = RigidTransform.from_angle(0.7, (50.0, 80.0))
        dst = true.apply(src)
        pre = RigidTransform.from_angle(q)
        model, _ = ransac_rigid(pre.apply(src), dst, RansacConfig(seed=4))
        expect = true.compose(pre.inverse())
        assert np.allclose(model.rotation, expect.rotation, atol=1e-6)

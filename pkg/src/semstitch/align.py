"""Rigid transforms and robust estimation from noisy point matches.

``fit_rigid`` is the closed-form 2D Procrustes solution without scaling or
reflection.  ``ransac_rigid`` wraps it in a deterministic RANSAC loop: each
iteration draws its sample from a counter-based PRNG keyed by (seed,
iteration), so results are bit-reproducible regardless of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSampleError, NoConsensusError

DEFAULT_INLIER_THRESHOLD = 500.0
DEFAULT_MAX_ITERATIONS = 1000
DEFAULT_SAMPLE_SIZE = 6
DEFAULT_SEED = 42


@dataclass
class RigidTransform:
    """2D rotation plus translation: p -> R @ p + t.

    ``rotation`` is a proper orthogonal 2x2 matrix (det +1); ``translation``
    is in pixels at the resolution of the points it was fit on.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(2, 2)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(2)
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(2), atol=1e-9):
            raise ValueError("rotation is not orthogonal")
        if not math.isclose(float(np.linalg.det(self.rotation)), 1.0, abs_tol=1e-9):
            raise ValueError("rotation must have det +1 (no reflection)")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def from_angle(cls, theta_rad: float, translation=(0.0, 0.0)) -> "RigidTransform":
        c, s = math.cos(theta_rad), math.sin(theta_rad)
        return cls(np.array([[c, -s], [s, c]]), np.asarray(translation, dtype=np.float64))

    @property
    def theta(self) -> float:
        """Rotation angle in radians, in (-pi, pi]."""
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    @property
    def theta_deg(self) -> float:
        return math.degrees(self.theta)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))


@dataclass
class RansacConfig:
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    sample_size: int = DEFAULT_SAMPLE_SIZE
    seed: int = DEFAULT_SEED
    min_inliers: int | None = None

    def __post_init__(self) -> None:
        if self.sample_size < 2:
            raise ValueError("sample_size must be >= 2")
        if not (self.inlier_threshold > 0):
            raise ValueError("inlier_threshold must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.min_inliers is None:
            self.min_inliers = self.sample_size


def _fit(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    a = src - sc
    b = dst - dc
    if float(np.abs(a).max(initial=0.0)) < 1e-12:
        raise DegenerateSampleError("degenerate sample: all source points coincide")
    cross = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    dot = float(np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]))
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return rot, dc - rot @ sc


def fit_rigid(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rotation + translation mapping ``src`` onto ``dst``.

    Closed form: center both sets, theta = atan2(sum cross, sum dot) of the
    centered pairs, translation from the centroids.  Requires at least two
    non-coincident source points.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError("src and dst must have equal length")
    if len(src) < 2:
        raise ValueError("need at least 2 point pairs")
    rot, t = _fit(src, dst)
    return RigidTransform(rot, t)


def ransac_rigid(
    src: np.ndarray, dst: np.ndarray, cfg: RansacConfig | None = None
) -> tuple[RigidTransform, np.ndarray]:
    """Consensus rigid transform from matched points with outliers.

    Runs ``cfg.max_iterations`` seeded trials, each fitting a random
    ``sample_size``-subset and counting points with residual within
    ``inlier_threshold``.  The best model (ties: earliest iteration) is
    refit on its inliers; the returned mask is the best model's inlier set.
    Raises ``NoConsensusError`` when there are fewer matches than the sample
    size or the best consensus is below ``min_inliers``.
    """
    cfg = cfg or RansacConfig()
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError("src and dst must have equal length")
    n = len(src)
    if n < cfg.sample_size:
        raise NoConsensusError(
            f"no consensus: {n} matches but sample size is {cfg.sample_size}"
        )

    best_count = -1
    best_mask: np.ndarray | None = None
    for i in range(cfg.max_iterations):
        gen = np.random.Generator(np.random.Philox(key=cfg.seed, counter=i))
        idx = gen.choice(n, size=cfg.sample_size, replace=False)
        try:
            rot, t = _fit(src[idx], dst[idx])
        except DegenerateSampleError:
            continue
        residual = np.hypot(*(src @ rot.T + t - dst).T)
        mask = residual <= cfg.inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < cfg.min_inliers:
        raise NoConsensusError(
            f"no consensus: best inlier count {max(best_count, 0)} < {cfg.min_inliers}"
        )
    model = fit_rigid(src[best_mask], dst[best_mask])
    return model, best_mask


def contour_normals(points: np.ndarray, half_window: int = 3) -> np.ndarray:
    """Unit normals of an ordered closed contour, smoothed over +-half_window."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(points)
    if n < 2 * half_window + 1:
        tangents = np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0)
    else:
        tangents = np.roll(points, -half_window, axis=0) - np.roll(points, half_window, axis=0)
    norms = np.hypot(tangents[:, 0], tangents[:, 1])
    norms[norms < 1e-12] = 1.0
    tangents = tangents / norms[:, None]
    return np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)


def refine_rigid_boundary(
    moving_pts: np.ndarray,
    fixed_pts: np.ndarray,
    init: RigidTransform,
    gate: float,
    moving_normals: np.ndarray | None = None,
    fixed_normals: np.ndarray | None = None,
    max_iterations: int = 48,
    max_translation: float | None = None,
    max_rotation_deg: float | None = None,
) -> RigidTransform:
    """Polish a rigid estimate by trimmed ICP on boundary contour pixels.

    Patch anchors are stride-quantized, so consensus poses carry an
    along-seam phase offset of up to half a stride; the dense mask contours
    resolve it.  Pairs farther than ``gate`` are trimmed, and when normals
    are supplied, pairs whose normals are neither aligned nor opposing are
    dropped: a contour sliding along a straight seam otherwise pairs its
    corners with the seam interior, which erases the restoring force and
    presses the fragments together.  The correction is rejected (``init``
    returned) when it exceeds the caps or fails to reduce the gated mean
    pair distance, so a bad initialization is never dragged further off.
    """
    from scipy.spatial import cKDTree

    moving_pts = np.asarray(moving_pts, dtype=np.float64).reshape(-1, 2)
    fixed_pts = np.asarray(fixed_pts, dtype=np.float64).reshape(-1, 2)
    if len(moving_pts) < 8 or len(fixed_pts) < 8:
        return init
    tree = cKDTree(fixed_pts)
    use_normals = moving_normals is not None and fixed_normals is not None

    def pair_mask(transform: RigidTransform, d, idx, step_gate) -> np.ndarray:
        sel = d <= step_gate
        if use_normals:
            rotated = moving_normals @ transform.rotation.T
            compat = np.abs(np.sum(rotated * fixed_normals[idx], axis=1)) >= 0.7
            sel = sel & compat
        return sel

    def gated_mean(transform: RigidTransform) -> float:
        d, idx = tree.query(transform.apply(moving_pts))
        sel = pair_mask(transform, d, idx, gate)
        return float(d[sel].mean()) if sel.any() else np.inf

    before = gated_mean(init)
    current = init
    if use_normals:
        # point-to-line iterations: each pair only constrains the offset
        # along the fixed contour's normal, so straight seam pairs permit
        # the slide that outline pairs then remove, without the rotation
        # limit-cycling point-to-point updates exhibit here.  The sequence
        # is not monotone (pair reassignment can feed back), so the best
        # iterate by gated mean distance is kept, not the last.
        best = (before, init)
        for iteration in range(max_iterations):
            d, idx = tree.query(current.apply(moving_pts))
            in_gate = pair_mask(current, d, idx, gate)
            if not in_gate.any():
                break
            score = float(d[in_gate].mean())
            if score < best[0]:
                best = (score, current)
            # schedule: translate-only while the contours approach (one-ended
            # first contact otherwise torques the fragment into a tilted
            # local minimum), then full rigid steps, then a tightened gate
            translate_only = iteration < 10
            if iteration < 22:
                step_gate = gate
            else:
                step_gate = max(12.0, min(gate, 3.0 * float(np.median(d[in_gate]))))
            sel = pair_mask(current, d, idx, step_gate)
            if sel.sum() < 8:
                break
            m = moving_pts[sel]
            f = fixed_pts[idx[sel]]
            n = fixed_normals[idx[sel]]
            rm = m @ current.rotation.T
            resid = np.sum(n * (rm + current.translation - f), axis=1)
            if translate_only:
                design = n
            else:
                # d(residual)/d(theta) = n . (J R m), J the 90-degree rotation
                a = -rm[:, 1] * n[:, 0] + rm[:, 0] * n[:, 1]
                design = np.column_stack([a, n])
            try:
                step, *_ = np.linalg.lstsq(design, -resid, rcond=None)
            except np.linalg.LinAlgError:
                break
            # damp the linearized step: large updates overshoot the
            # small-angle approximation and can run away along soft modes
            if translate_only:
                dtheta, dt = 0.0, step
            else:
                dtheta, dt = float(np.clip(step[0], -0.02, 0.02)), step[1:]
            shift = float(np.hypot(dt[0], dt[1]))
            if shift > 10.0:
                dt = dt * (10.0 / shift)
            current = RigidTransform.from_angle(
                current.theta + dtheta, current.translation + dt
            )
            if (iteration >= 22 and abs(dtheta) < 1e-10
                    and float(np.hypot(dt[0], dt[1])) < 1e-7):
                break
        final_score = gated_mean(current)
        current = current if final_score < best[0] else best[1]
    else:
        # no normals available: trimmed point-to-point with a wide gate
        for _ in range(max_iterations):
            d, idx = tree.query(current.apply(moving_pts))
            within = d[d <= gate]
            if within.size == 0:
                return init
            step_gate = max(4.0, 0.25 * gate, min(gate, 3.0 * float(np.median(within))))
            sel = d <= step_gate
            if sel.sum() < 8:
                return init
            try:
                refined = fit_rigid(moving_pts[sel], fixed_pts[idx[sel]])
            except (DegenerateSampleError, ValueError):
                return init
            delta = abs(refined.theta - current.theta) + float(
                np.linalg.norm(refined.translation - current.translation)
            )
            current = refined
            if delta < 1e-7:
                break

    centroid = moving_pts.mean(axis=0)
    correction = float(np.linalg.norm(current.apply(centroid) - init.apply(centroid)))
    dtheta_deg = abs(math.degrees(current.theta - init.theta))
    if max_translation is not None and correction > max_translation:
        return init
    if max_rotation_deg is not None and dtheta_deg > max_rotation_deg:
        return init
    return current if gated_mean(current) <= before else init

"""Iterative stitch loop: pair, align, composite, repeat until one remains.

Fragments are prepared into boundary patch features, then merged pairwise.
Each merge warps the moving fragment onto the fixed fragment's canvas
(grown to the joint bounding box; fixed pixels win on overlap) and the
composite's boundary frames and features are recomputed so the next round
matches against the merged outline.  Tissue separated by removed gap strips
leaves the composite disconnected, so frames are recomputed per connected
component; context stacks never wrap across components.

Poses are tracked per original fragment at processing resolution and
rescaled for the final render.  Coordinates put pixel centers on the
integer grid; converting a pose between resolutions with pixel-area ratio
``r`` maps translations as ``t' = r*t + (r-1)/2 * ((1,1) - R(1,1))``, which
reduces to plain scaling for unrotated poses.
"""

from __future__ import annotations

import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .align import (
    RansacConfig,
    RigidTransform,
    contour_normals,
    fit_rigid,
    ransac_rigid,
    refine_rigid_boundary,
)
from .config import RunConfig
from .contour import trace_component_boundaries
from .encoder import EncoderSpec, encode_batch
from .errors import (
    CanvasBudgetError,
    FragmentTooSmallError,
    NoConsensusError,
    NoTissueError,
    SemStitchError,
    ShortBoundaryError,
)
from .matching import build_stacks, match_candidates
from .patchex import Patch, PatchFrame, extract, frame_anchor, plan_frames
from .raster import Raster, load_image, quantize_u8, resample, segment_tissue

RENDER_MARGIN = 16


def _snap(values: np.ndarray) -> np.ndarray:
    # kill 1e-15-scale rotation fuzz before floor/ceil so exact-angle poses
    # do not spill the canvas bounding box by a pixel
    return np.round(values, 6)


@dataclass
class Fragment:
    """One pool entry: image at processing resolution plus boundary features.

    ``boundary_spans`` groups ``frames`` rows by connected boundary
    component; context stacks are built per span.  ``pose`` maps fragment
    coordinates into the mosaic frame (identity until stitched).
    """

    id: str
    image: Raster
    full_res_image: Raster | None
    mask: np.ndarray
    frames: list[PatchFrame]
    features: np.ndarray
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    boundary_spans: list[tuple[int, int]] = field(default_factory=list)
    boundary_points: np.ndarray | None = None
    boundary_normals: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.features):
            raise ValueError("frames and features must have equal length")
        if not self.boundary_spans:
            self.boundary_spans = [(0, len(self.frames))]

    @property
    def anchors(self) -> np.ndarray:
        return np.array([frame_anchor(f) for f in self.frames])


class SpecEncoder:
    """Adapter running an EncoderSpec batch; ignores patch origins."""

    def __init__(self, spec: EncoderSpec, workdir: str | Path | None = None):
        self.spec = spec
        self.k = spec.K
        self._workdir = workdir
        self._tmp = None

    def _ensure_workdir(self):
        if self._workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="semstitch-bridge-")
            self._workdir = self._tmp.name
        return self._workdir

    def encode_patches(self, patches: list[Patch], origins) -> np.ndarray:
        workdir = self._ensure_workdir() if self.spec.kind == "external" else None
        return encode_batch(self.spec, patches, workdir)


def scale_pose(pose: RigidTransform, ratio: float) -> RigidTransform:
    """Convert a pose between resolutions with pixel-size ratio ``ratio``.

    ``ratio = source_mpp / target_mpp``; exact under the half-pixel-center
    coordinate convention used throughout.
    """
    ones = np.ones(2)
    t = ratio * pose.translation + (ratio - 1.0) / 2.0 * (ones - pose.rotation @ ones)
    return RigidTransform(pose.rotation.copy(), t)


def _translate(offset) -> RigidTransform:
    return RigidTransform(np.eye(2), np.asarray(offset, dtype=np.float64))


def warp_rigid_region(
    pixels: np.ndarray,
    pose: RigidTransform,
    x0: int,
    y0: int,
    width: int,
    height: int,
    cval: float = 255.0,
) -> np.ndarray:
    """Inverse-map bilinear warp of ``pixels`` under ``pose`` into a region.

    Returns float64 samples for output pixels [x0, x0+width) x [y0, y0+height).
    """
    xs = np.arange(x0, x0 + width, dtype=np.float64)
    ys = np.arange(y0, y0 + height, dtype=np.float64)
    xx, yy = np.meshgrid(xs, ys)
    inv = pose.inverse()
    sx = inv.rotation[0, 0] * xx + inv.rotation[0, 1] * yy + inv.translation[0]
    sy = inv.rotation[1, 0] * xx + inv.rotation[1, 1] * yy + inv.translation[1]
    coords = np.stack([sy.ravel(), sx.ravel()])
    if pixels.ndim == 2:
        out = ndimage.map_coordinates(
            pixels.astype(np.float64), coords, order=1, mode="constant", cval=cval
        ).reshape(height, width)
    else:
        out = np.stack(
            [
                ndimage.map_coordinates(
                    pixels[:, :, c].astype(np.float64), coords, order=1,
                    mode="constant", cval=cval,
                ).reshape(height, width)
                for c in range(pixels.shape[2])
            ],
            axis=-1,
        )
    return out


def _plan_fragment_frames(
    img: Raster, mask: np.ndarray, cfg: RunConfig
) -> tuple[list[PatchFrame], list[tuple[int, int]], np.ndarray]:
    chains = trace_component_boundaries(mask, min_area=cfg.min_component_area)
    frames: list[PatchFrame] = []
    spans: list[tuple[int, int]] = []
    for chain in chains:
        planned = plan_frames(chain, mask, cfg.patch_size, cfg.effective_stride)
        if planned:
            spans.append((len(frames), len(frames) + len(planned)))
            frames.extend(planned)
    points = np.vstack([c.points for c in chains]).astype(np.float64)
    normals = np.vstack([contour_normals(c.points) for c in chains])
    return frames, spans, points, normals


@dataclass
class FragmentParts:
    """Encoder-independent preparation of one fragment image."""

    proc: Raster
    mask: np.ndarray
    frames: list[PatchFrame]
    spans: list[tuple[int, int]]
    patches: list[Patch]
    boundary_points: np.ndarray
    boundary_normals: np.ndarray


def prepare_parts(img: Raster, cfg: RunConfig, fragment_id: str = "") -> FragmentParts:
    """Resample, segment, trace, and sample patches (no encoding).

    Split out so experiment sweeps can encode the same geometry with several
    encoders without re-extracting patches.
    """
    proc = resample(img, cfg.processing_mpp)
    mask = segment_tissue(proc, cfg.min_component_area)
    frames, spans, points, normals = _plan_fragment_frames(proc, mask, cfg)
    if not frames:
        raise FragmentTooSmallError(f"fragment too small: {fragment_id or 'unnamed'}")
    patches = [extract(proc, f) for f in frames]
    return FragmentParts(proc, mask, frames, spans, patches, points, normals)


def fragment_from_parts(
    parts: FragmentParts,
    fragment_id: str,
    encoder,
    full_res: Raster | None = None,
) -> Fragment:
    origins = [(fragment_id, frame_anchor(f)) for f in parts.frames]
    features = encoder.encode_patches(parts.patches, origins)
    return Fragment(
        id=fragment_id,
        image=parts.proc,
        full_res_image=full_res,
        mask=parts.mask,
        frames=parts.frames,
        features=features,
        boundary_spans=parts.spans,
        boundary_points=parts.boundary_points,
        boundary_normals=parts.boundary_normals,
    )


def prepare_fragment_raster(
    img: Raster,
    fragment_id: str,
    cfg: RunConfig,
    encoder=None,
    full_res: Raster | None = None,
) -> Fragment:
    """Resample, segment, trace, sample, and encode one fragment image."""
    parts = prepare_parts(img, cfg, fragment_id)
    enc = encoder if encoder is not None else SpecEncoder(cfg.encoder)
    return fragment_from_parts(
        parts, fragment_id, enc, full_res if full_res is not None else img
    )


def prepare_fragment(
    path: str | Path,
    cfg: RunConfig,
    fragment_id: str | None = None,
    encoder=None,
    mpp: float | None = None,
) -> Fragment:
    path = Path(path)
    img = load_image(path, mpp=mpp)
    return prepare_fragment_raster(img, fragment_id or path.stem, cfg, encoder=encoder)


def prepare_fragments(
    paths: list[str | Path],
    cfg: RunConfig,
    encoder=None,
    mpp: float | None = None,
) -> list[Fragment]:
    """Prepare several fragments, optionally in parallel, preserving order."""
    ids = [Path(p).stem for p in paths]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate fragment ids from file names: {ids}")
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            futures = [
                pool.submit(prepare_fragment, p, cfg, i, encoder, mpp)
                for p, i in zip(paths, ids)
            ]
            return [f.result() for f in futures]
    return [prepare_fragment(p, cfg, i, encoder, mpp) for p, i in zip(paths, ids)]


@dataclass
class _Member:
    id: str
    image: Raster
    full_res: Raster | None
    mask: np.ndarray
    pose: RigidTransform
    first_merge_step: int


@dataclass
class _Entry:
    label: str
    fragment: Fragment
    members: list[_Member]
    stacks: np.ndarray | None = None
    stack_index: np.ndarray | None = None


def _entry_stacks(entry: _Entry, n: int) -> tuple[np.ndarray, np.ndarray]:
    if entry.stacks is None:
        blocks = []
        index: list[int] = []
        for a, b in entry.fragment.boundary_spans:
            if b - a >= 2 * n + 1:
                blocks.append(build_stacks(entry.fragment.features[a:b], n))
                index.extend(range(a, b))
        if not blocks:
            raise ShortBoundaryError(
                f"fragment boundary too short for neighborhood: {entry.label}"
            )
        entry.stacks = np.vstack(blocks)
        entry.stack_index = np.asarray(index)
    return entry.stacks, entry.stack_index


def _ensure_channels(pixels: np.ndarray, channels: int) -> np.ndarray:
    if channels == 3 and pixels.ndim == 2:
        return np.repeat(pixels[:, :, None], 3, axis=2)
    return pixels


def _find_origin(members: list[_Member], frame: PatchFrame):
    anchor = frame_anchor(frame)
    for probe in (frame.center, anchor):
        for m in members:
            inv = m.pose.inverse()
            p = inv.apply(probe)
            x = int(np.floor(p[0] + 0.5))
            y = int(np.floor(p[1] + 0.5))
            h, w = m.mask.shape
            if 0 <= x < w and 0 <= y < h and m.mask[y, x]:
                return (m.id, inv.apply(anchor))
    return None


def _merge_entries(
    fixed: _Entry,
    moving: _Entry,
    transform: RigidTransform,
    cfg: RunConfig,
    encoder,
    step: int,
) -> _Entry:
    fximg = fixed.fragment.image
    mvimg = moving.fragment.image
    h_m, w_m = mvimg.pixels.shape[:2]
    corners = np.array([[0, 0], [w_m - 1, 0], [0, h_m - 1], [w_m - 1, h_m - 1]], dtype=float)
    mapped = _snap(transform.apply(corners))
    min_x = int(np.floor(min(0.0, mapped[:, 0].min())))
    min_y = int(np.floor(min(0.0, mapped[:, 1].min())))
    max_x = int(np.ceil(max(fximg.width - 1.0, mapped[:, 0].max())))
    max_y = int(np.ceil(max(fximg.height - 1.0, mapped[:, 1].max())))
    width, height = max_x - min_x + 1, max_y - min_y + 1
    if width * height > cfg.max_canvas_pixels:
        raise CanvasBudgetError(f"canvas too large: {width}x{height}")

    channels = 3 if 3 in (fximg.channels, mvimg.channels) else 1
    shape = (height, width) if channels == 1 else (height, width, 3)
    canvas = np.full(shape, 255, dtype=np.uint8)
    covered = np.zeros((height, width), dtype=bool)

    offset = np.array([-min_x, -min_y], dtype=float)
    pose_mv = _translate(offset).compose(transform)

    # paint the moving fragment (bilinear warp restricted to its extent)
    mv_mapped = _snap(pose_mv.apply(corners))
    rx0 = max(0, int(np.floor(mv_mapped[:, 0].min())))
    ry0 = max(0, int(np.floor(mv_mapped[:, 1].min())))
    rx1 = min(width - 1, int(np.ceil(mv_mapped[:, 0].max())))
    ry1 = min(height - 1, int(np.ceil(mv_mapped[:, 1].max())))
    rw, rh = rx1 - rx0 + 1, ry1 - ry0 + 1
    warped = warp_rigid_region(
        _ensure_channels(mvimg.pixels, channels), pose_mv, rx0, ry0, rw, rh
    )
    warped_mask = (
        warp_rigid_region(moving.fragment.mask.astype(np.float64), pose_mv,
                          rx0, ry0, rw, rh, cval=0.0) >= 0.5
    )
    region_img = canvas[ry0 : ry0 + rh, rx0 : rx0 + rw]
    region_img[warped_mask] = quantize_u8(warped)[warped_mask]
    covered[ry0 : ry0 + rh, rx0 : rx0 + rw] |= warped_mask

    # paint the fixed fragment on top: fixed pixels win on overlap
    ox, oy = int(offset[0]), int(offset[1])
    fsl = np.s_[oy : oy + fximg.height, ox : ox + fximg.width]
    fmask = fixed.fragment.mask
    canvas[fsl][fmask] = _ensure_channels(fximg.pixels, channels)[fmask]
    covered[fsl] |= fmask

    merged_img = Raster(canvas, fximg.mpp)
    frames, spans, points, normals = _plan_fragment_frames(merged_img, covered, cfg)
    if not frames:
        raise FragmentTooSmallError("merged composite has no usable boundary")
    patches = [extract(merged_img, f) for f in frames]

    members: list[_Member] = []
    for m in fixed.members:
        members.append(
            replace(
                m,
                pose=_translate(offset).compose(m.pose),
                first_merge_step=m.first_merge_step or step,
            )
        )
    for m in moving.members:
        members.append(
            replace(
                m,
                pose=pose_mv.compose(m.pose),
                first_merge_step=m.first_merge_step or step,
            )
        )
    origins = [_find_origin(members, f) for f in frames]
    features = encoder.encode_patches(patches, origins)

    fragment = Fragment(
        id=f"merge{step}",
        image=merged_img,
        full_res_image=None,
        mask=covered,
        frames=frames,
        features=features,
        boundary_spans=spans,
        boundary_points=points,
        boundary_normals=normals,
    )
    return _Entry(label=f"merge{step}", fragment=fragment, members=members)


def _render_members(
    members: list[_Member], out_mpp: float, max_pixels: int, margin: int = RENDER_MARGIN
) -> tuple[Raster, np.ndarray]:
    """Render members (poses at processing res) at ``out_mpp``.

    Returns the canvas and its origin in out-resolution mosaic coordinates.
    Earlier members take precedence on overlap.
    """
    prepared = []
    extents = []
    for m in members:
        src = m.full_res if m.full_res is not None else m.image
        src_out = src if src.mpp == out_mpp else resample(src, out_mpp)
        ratio = m.image.mpp / out_mpp
        pose_out = scale_pose(m.pose, ratio)
        h, w = src_out.pixels.shape[:2]
        corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float)
        mapped = _snap(pose_out.apply(corners))
        prepared.append((m, src_out, pose_out))
        extents.append(mapped)
    allpts = np.vstack(extents)
    origin = np.floor(allpts.min(axis=0)).astype(int) - margin
    top = np.ceil(allpts.max(axis=0)).astype(int) + margin
    width, height = int(top[0] - origin[0] + 1), int(top[1] - origin[1] + 1)
    if width * height > max_pixels:
        raise CanvasBudgetError(f"canvas too large: {width}x{height}")

    channels = 3 if any(p[1].channels == 3 for p in prepared) else 1
    shape = (height, width) if channels == 1 else (height, width, 3)
    canvas = np.full(shape, 255, dtype=np.uint8)
    claimed = np.zeros((height, width), dtype=bool)

    for m, src_out, pose_out in prepared:
        pose_c = _translate(-origin.astype(float)).compose(pose_out)
        h, w = src_out.pixels.shape[:2]
        corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float)
        mapped = _snap(pose_c.apply(corners))
        rx0 = max(0, int(np.floor(mapped[:, 0].min())))
        ry0 = max(0, int(np.floor(mapped[:, 1].min())))
        rx1 = min(width - 1, int(np.ceil(mapped[:, 0].max())))
        ry1 = min(height - 1, int(np.ceil(mapped[:, 1].max())))
        rw, rh = rx1 - rx0 + 1, ry1 - ry0 + 1
        if rw <= 0 or rh <= 0:
            continue
        warped = warp_rigid_region(
            _ensure_channels(src_out.pixels, channels), pose_c, rx0, ry0, rw, rh
        )
        # sample the processing-resolution mask in its own coordinates:
        # out-res fragment coords -> processing coords via the half-pixel map
        ratio = m.image.mpp / out_mpp
        xs = np.arange(rx0, rx0 + rw, dtype=np.float64)
        ys = np.arange(ry0, ry0 + rh, dtype=np.float64)
        xx, yy = np.meshgrid(xs, ys)
        inv = pose_c.inverse()
        fx = inv.rotation[0, 0] * xx + inv.rotation[0, 1] * yy + inv.translation[0]
        fy = inv.rotation[1, 0] * xx + inv.rotation[1, 1] * yy + inv.translation[1]
        px = (fx + 0.5) / ratio - 0.5
        py = (fy + 0.5) / ratio - 0.5
        warped_mask = ndimage.map_coordinates(
            m.mask.astype(np.float64),
            np.stack([py.ravel(), px.ravel()]),
            order=1,
            mode="constant",
            cval=0.0,
        ).reshape(rh, rw) >= 0.5
        paint = warped_mask & ~claimed[ry0 : ry0 + rh, rx0 : rx0 + rw]
        canvas[ry0 : ry0 + rh, rx0 : rx0 + rw][paint] = quantize_u8(warped)[paint]
        claimed[ry0 : ry0 + rh, rx0 : rx0 + rw] |= warped_mask
    return Raster(canvas, out_mpp), origin


def render_composite(
    fragments: list[Fragment],
    out_mpp: float,
    margin: int = RENDER_MARGIN,
    max_pixels: int = 2_000_000_000,
) -> Raster:
    """Warp fragments with their final poses onto one canvas.

    The canvas is the bounding box of all warped extents plus ``margin``;
    earlier-listed fragments take precedence on overlap; uncovered pixels
    stay white.
    """
    members = [
        _Member(f.id, f.image, f.full_res_image, f.mask, f.pose, 0) for f in fragments
    ]
    canvas, _ = _render_members(members, out_mpp, max_pixels, margin)
    return canvas


def stitch(pool: list[Fragment], cfg: RunConfig, encoder=None) -> tuple[Raster, dict]:
    """Merge fragments until a single mosaic remains.

    Returns the composite rendered at ``cfg.output_mpp`` and a manifest
    recording per-fragment final poses (at output resolution), merge
    statistics, and the full configuration.  When no fragment pair reaches
    consensus the run aborts with a partial manifest covering the merges
    that succeeded; the largest surviving group is rendered.
    """
    if not pool:
        raise ValueError("empty fragment pool")
    ids = [f.id for f in pool]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate fragment ids: {ids}")
    if encoder is None:
        encoder = SpecEncoder(cfg.encoder)

    entries = [
        _Entry(
            label=f.id,
            fragment=f,
            members=[_Member(f.id, f.image, f.full_res_image, f.mask,
                             RigidTransform.identity(), 0)],
        )
        for f in pool
    ]
    rng = np.random.default_rng(cfg.seed)
    merges: list[dict] = []
    status = "complete"
    step = 1

    while len(entries) > 1:
        order = [int(i) for i in rng.permutation(len(entries))]
        merged = False
        for mi in order:
            moving = entries[mi]
            try:
                mstacks, mindex = _entry_stacks(moving, cfg.neighborhood)
            except ShortBoundaryError:
                continue
            manchors = moving.fragment.anchors
            candidates = []
            for j, other in enumerate(entries):
                if j == mi:
                    continue
                try:
                    fstacks, findex = _entry_stacks(other, cfg.neighborhood)
                except ShortBoundaryError:
                    continue
                matches = match_candidates(mstacks, fstacks, cfg.neighborhood)
                score = float(sum(m.similarity for m in matches))
                candidates.append((score, other.label, j, matches, findex))
            candidates.sort(key=lambda c: (-c[0], c[1]))
            for score, label, j, matches, findex in candidates:
                fanchors = entries[j].fragment.anchors
                # alignment uses the highest-similarity half of the candidates:
                # low-scoring far-boundary matches otherwise form projection
                # clusters that can outvote a short true seam
                ranked = sorted(matches, key=lambda m: (-m.similarity, m.moving_index))
                keep = max(
                    cfg.ransac.sample_size,
                    min(len(ranked), max(2 * cfg.ransac.sample_size, (len(ranked) + 1) // 2)),
                )
                selected = ranked[:keep]
                src = np.array([manchors[mindex[m.moving_index]] for m in selected])
                dst = np.array([fanchors[findex[m.fixed_index]] for m in selected])
                record = {
                    "moving": moving.label,
                    "fixed": label,
                    "pair_score": score,
                    "candidate_count": len(matches),
                    "ransac_count": len(selected),
                    "inlier_count": 0,
                    "status": "ok",
                }
                try:
                    model, inliers = ransac_rigid(src, dst, cfg.ransac)
                    record["inlier_count"] = int(inliers.sum())
                    # second, tighter consensus pass over the inliers: with a
                    # gap-sized threshold the rotation is weakly constrained
                    # (offsets of a rotated pose stay within threshold along a
                    # short seam); only the true rotation keeps the residual
                    # offsets mutually consistent at one-stride scale
                    stride = cfg.effective_stride
                    if (cfg.ransac.inlier_threshold > stride
                            and int(inliers.sum()) >= cfg.ransac.sample_size + 2):
                        tight = RansacConfig(
                            inlier_threshold=float(stride),
                            max_iterations=cfg.ransac.max_iterations,
                            sample_size=cfg.ransac.sample_size,
                            seed=cfg.ransac.seed,
                            min_inliers=cfg.ransac.min_inliers,
                        )
                        try:
                            model, tight_inliers = ransac_rigid(
                                src[inliers], dst[inliers], tight
                            )
                            record["tight_inlier_count"] = int(tight_inliers.sum())
                        except NoConsensusError:
                            pass
                    # anchors are stride-quantized; polish the consensus pose
                    # on the dense boundary contours (capped, reject-on-worse)
                    if (moving.fragment.boundary_points is not None
                            and entries[j].fragment.boundary_points is not None):
                        model = refine_rigid_boundary(
                            moving.fragment.boundary_points,
                            entries[j].fragment.boundary_points,
                            model,
                            gate=1.5 * stride,
                            moving_normals=moving.fragment.boundary_normals,
                            fixed_normals=entries[j].fragment.boundary_normals,
                            max_translation=cfg.ransac.inlier_threshold + stride,
                            max_rotation_deg=45.0,
                        )
                    new_entry = _merge_entries(entries[j], moving, model, cfg, encoder, step)
                except (NoConsensusError, CanvasBudgetError, NoTissueError,
                        FragmentTooSmallError, ShortBoundaryError) as exc:
                    record["status"] = type(exc).__name__
                    merges.append(record)
                    continue
                record["step"] = step
                merges.append(record)
                entries = [e for k, e in enumerate(entries) if k not in (mi, j)]
                entries.append(new_entry)
                step += 1
                merged = True
                break
            if merged:
                break
        if not merged:
            status = "partial"
            break

    # largest surviving group is the rendered mosaic
    entries.sort(key=lambda e: (-len(e.members), e.label))
    main = entries[0]
    composite, origin = _render_members(
        main.members, cfg.output_mpp, cfg.max_canvas_pixels
    )

    fragments_out = []
    for entry in entries:
        for m in entry.members:
            ratio = m.image.mpp / cfg.output_mpp
            pose_out = scale_pose(m.pose, ratio)
            if entry is main:
                pose_out = _translate(-origin.astype(float)).compose(pose_out)
            fragments_out.append(
                {
                    "id": m.id,
                    "group": entry.label,
                    "theta_deg": pose_out.theta_deg,
                    "tx": float(pose_out.translation[0]),
                    "ty": float(pose_out.translation[1]),
                    "merge_step": m.first_merge_step,
                }
            )
    fragments_out.sort(key=lambda f: f["id"])

    manifest = {
        "schema": "semstitch-manifest/1",
        "status": status,
        "seed": cfg.seed,
        "config": cfg.to_manifest_dict(),
        "fragments": fragments_out,
        "merges": merges,
    }
    return composite, manifest

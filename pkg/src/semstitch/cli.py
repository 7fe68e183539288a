"""Command-line interface: stitch, fragment, evaluate, encode.

Configuration precedence: command-line flag > ``--config`` JSON file >
built-in default.  The ``SEMSTITCH_BRIDGE`` environment variable overrides
the external-encoder command.  Exit codes: 0 success, 1 error, 2 partial
mosaic.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .align import RansacConfig
from .config import RunConfig, load_config_file
from .encoder import (
    EncoderSpec,
    encode_pixels,
    read_patches_file,
    write_features_file,
)
from .errors import SemStitchError
from .harness import (
    FragmentationSpec,
    boundary_match_experiment,
    fragment_slide,
    generate_synthetic_slide,
    match_accuracy_vs_gap,
    neighborhood_sweep,
    resolution_sweep,
    rotation_invariance_sweep,
    similarity_vs_offset,
)
from .mosaic import prepare_fragments, stitch
from .raster import Raster, load_image, save_image

EXPERIMENTS = (
    "match-vs-gap",
    "similarity-vs-offset",
    "rotation-invariance",
    "neighborhood-sweep",
    "resolution-sweep",
    "boundary-match",
)

_CONFIG_KEYS = (
    "processing_mpp",
    "output_mpp",
    "patch_size",
    "stride",
    "neighborhood",
    "seed",
    "min_component_area",
    "threads",
    "ransac_threshold",
    "ransac_iterations",
    "ransac_samples",
    "ransac_min_inliers",
    "encoder",
    "bridge_cmd",
)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flag > file > default)")
    parser.add_argument("--processing-mpp", type=float, help="processing resolution, microns/px (default 1.0)")
    parser.add_argument("--output-mpp", type=float, help="reconstruction resolution, microns/px (default 0.25)")
    parser.add_argument("--patch-size", type=int, help="boundary patch size in px (default 224)")
    parser.add_argument("--stride", type=int, help="anchor stride in px (default patch_size/2)")
    parser.add_argument("--neighborhood", type=int, help="context stack radius n (default 3)")
    parser.add_argument("--encoder", choices=["baseline", "ncc", "external"],
                        help="patch encoder (default baseline)")
    parser.add_argument("--bridge-cmd", help="external encoder command (SEMSTITCH_BRIDGE overrides)")
    parser.add_argument("--bridge-k", type=int, default=None, help="feature width K of the external encoder")
    parser.add_argument("--ransac-threshold", type=float, help="inlier threshold in px (default 500)")
    parser.add_argument("--ransac-iterations", type=int, help="max iterations (default 1000)")
    parser.add_argument("--ransac-samples", type=int, help="sample size (default 6)")
    parser.add_argument("--ransac-min-inliers", type=int, help="minimum consensus (default = sample size)")
    parser.add_argument("--seed", type=int, help="global random seed (default 42)")
    parser.add_argument("--min-component-area", type=int, help="smallest tissue component kept, px^2 (default 1024)")
    parser.add_argument("--threads", type=int, help="worker cap for fragment preparation (default 1)")
    parser.add_argument("--mpp", type=float, help="override input image resolution (else sidecar, else 0.25)")
    parser.add_argument("--out-dir", default=".", help="output directory (default current)")


def _merge_settings(args: argparse.Namespace) -> dict:
    settings: dict = {}
    if args.config:
        file_cfg = load_config_file(args.config)
        for key in _CONFIG_KEYS:
            if key in file_cfg:
                settings[key] = file_cfg[key]
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def build_run_config(args: argparse.Namespace) -> RunConfig:
    s = _merge_settings(args)
    ransac = RansacConfig(
        inlier_threshold=s.get("ransac_threshold", 500.0),
        max_iterations=s.get("ransac_iterations", 1000),
        sample_size=s.get("ransac_samples", 6),
        seed=s.get("seed", 42),
        min_inliers=s.get("ransac_min_inliers"),
    )
    encoder_name = s.get("encoder", "baseline")
    patch_size = s.get("patch_size", 224)
    bridge = os.environ.get("SEMSTITCH_BRIDGE") or s.get("bridge_cmd")
    if encoder_name == "baseline":
        spec = EncoderSpec.baseline()
    elif encoder_name == "ncc":
        spec = EncoderSpec.ncc(patch_size)
    elif encoder_name == "external":
        if not bridge:
            raise SemStitchError("external encoder needs --bridge-cmd or SEMSTITCH_BRIDGE")
        spec = EncoderSpec.external(bridge, K=getattr(args, "bridge_k", None) or 1024)
    else:
        raise SemStitchError(f"unknown encoder {encoder_name!r}")
    return RunConfig(
        processing_mpp=s.get("processing_mpp", 1.0),
        output_mpp=s.get("output_mpp", 0.25),
        patch_size=patch_size,
        stride=s.get("stride"),
        neighborhood=s.get("neighborhood", 3),
        encoder=spec,
        ransac=ransac,
        seed=s.get("seed", 42),
        min_component_area=s.get("min_component_area", 1024),
        threads=s.get("threads", 1),
    )


def _manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def cmd_stitch(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool = prepare_fragments(args.inputs, cfg, mpp=args.mpp)
    composite, manifest = stitch(pool, cfg)
    # PNG caps dimensions at 65500; fall back to TIFF for larger canvases
    suffix = ".png" if max(composite.width, composite.height) < 65000 else ".tif"
    save_image(composite, out_dir / f"composite{suffix}")
    (out_dir / "manifest.json").write_text(_manifest_json(manifest))
    print(f"wrote {out_dir / ('composite' + suffix)} and manifest.json "
          f"({manifest['status']}, {len(manifest['merges'])} merge attempts)")
    return 0 if manifest["status"] == "complete" else 2


def cmd_fragment(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.slide == "synthetic":
        slide = generate_synthetic_slide(args.slide_seed, args.slide_size)
    else:
        slide = load_image(args.slide, mpp=args.mpp)
    trim = tuple(float(x) for x in args.trim.split(":")) if ":" in args.trim \
        else (0.0, float(args.trim))
    rows, cols = (args.rows, args.cols) if args.layout == "grid" else (0, 0)
    spec = FragmentationSpec(
        layout=args.layout, rows=rows or 2, cols=cols or 2, gap_um=args.gap,
        edge_trim=trim, rotation_deg=args.rotate, translation_px=args.translate,
        seed=args.seed if args.seed is not None else 0,
    )
    fragments, gt = fragment_slide(slide, spec, patch_size=args.patch_size or 224)
    for fid, raster in fragments:
        save_image(raster, out_dir / f"{fid}.png")
        (out_dir / f"{fid}.json").write_text(json.dumps({"mpp": raster.mpp}) + "\n")
    (out_dir / "ground_truth.json").write_text(
        json.dumps(gt.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {len(fragments)} fragments and ground_truth.json to {out_dir}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.experiment not in EXPERIMENTS:
        print(f"unknown experiment {args.experiment!r}; valid: {', '.join(EXPERIMENTS)}",
              file=sys.stderr)
        return 1
    cfg = build_run_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = tuple(range(args.n_seeds))
    encoders = tuple(args.eval_encoders.split(",")) if args.eval_encoders else None

    if args.experiment == "match-vs-gap":
        report = match_accuracy_vs_gap(
            cfg, encoders=encoders or ("baseline", "ncc", "oracle"),
            slide_seeds=seeds, slide_size=args.slide_size, sigma=args.sigma,
        )
        paths = {"match_vs_gap.csv": report}
    elif args.experiment == "similarity-vs-offset":
        report = similarity_vs_offset(
            cfg, encoder=(encoders or ("baseline",))[0],
            slide_seeds=seeds, slide_size=args.slide_size, sigma=args.sigma,
        )
        paths = {"similarity_vs_offset.csv": report}
    elif args.experiment == "rotation-invariance":
        report = rotation_invariance_sweep(
            cfg, encoder=(encoders or ("baseline",))[0],
            slide_seed=seeds[0] if seeds else 0, slide_size=args.slide_size,
        )
        paths = {"rotation_invariance.csv": report}
    elif args.experiment == "neighborhood-sweep":
        report = neighborhood_sweep(
            cfg, slide_seeds=seeds, slide_size=args.slide_size,
            encoder=(encoders or ("oracle",))[0], sigma=args.sigma,
        )
        paths = {"neighborhood_sweep.csv": report}
    elif args.experiment == "resolution-sweep":
        report, timings = resolution_sweep(
            cfg, slide_seed=seeds[0] if seeds else 0, slide_size=args.slide_size,
            encoder=(encoders or ("oracle",))[0],
        )
        paths = {"resolution_sweep.csv": report}
        timing_lines = ["mpp,wall_seconds"] + [
            f"{mpp:g},{secs:.3f}" for mpp, secs in sorted(timings.items())
        ]
        (out_dir / "resolution_timing.csv").write_text("\n".join(timing_lines) + "\n")
    else:  # boundary-match
        spec = FragmentationSpec(
            layout="quadrants", gap_um=args.gap, edge_trim=(0.0, 0.2),
            rotation_deg=args.rotate, translation_px=args.translate,
        )
        report = boundary_match_experiment(
            cfg, spec, slide_seeds=seeds, slide_size=args.slide_size,
            encoder=(encoders or ("oracle",))[0], sigma=args.sigma,
        )
        paths = {"boundary_match.csv": report}

    for name, report in paths.items():
        report.write_csv(out_dir / name)
        print(f"wrote {out_dir / name}")
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    batch = read_patches_file(args.request)
    if args.encoder == "baseline":
        spec = EncoderSpec.baseline()
    else:
        h, w = (batch.shape[1], batch.shape[2]) if batch.shape[0] else (224, 224)
        spec = EncoderSpec("ncc", max((h // 4) * (w // 4), 4))
    rows = [encode_pixels(spec, patch[:, :, 0] if patch.shape[2] == 1 else patch)
            for patch in batch]
    features = np.stack(rows) if rows else np.zeros((0, spec.K), dtype=np.float32)
    write_features_file(args.response, features)
    print(f"encoded {features.shape[0]} patches at K={spec.K} -> {args.response}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semstitch",
        description="Mosaic tissue fragment images by boundary-patch semantic matching",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_stitch = sub.add_parser("stitch", help="stitch fragment images into one mosaic")
    p_stitch.add_argument("inputs", nargs="+", help="fragment image files (PNG/TIFF)")
    _add_common_flags(p_stitch)
    p_stitch.set_defaults(func=cmd_stitch)

    p_frag = sub.add_parser("fragment", help="cut a slide into fragments with ground truth")
    p_frag.add_argument("slide", help="slide image path, or 'synthetic'")
    p_frag.add_argument("--layout", choices=["halves", "quadrants", "grid"], default="quadrants")
    p_frag.add_argument("--rows", type=int, default=2, help="grid rows (layout=grid)")
    p_frag.add_argument("--cols", type=int, default=2, help="grid cols (layout=grid)")
    p_frag.add_argument("--gap", type=float, default=0.0, help="cut gap in microns (default 0)")
    p_frag.add_argument("--trim", default="0", help="edge trim fraction 'hi' or 'lo:hi' (default 0)")
    p_frag.add_argument("--rotate", type=float, default=0.0, help="max |rotation| per fragment, degrees")
    p_frag.add_argument("--translate", type=float, default=0.0, help="max |translation| per fragment, px")
    p_frag.add_argument("--slide-seed", type=int, default=0, help="synthetic slide seed")
    p_frag.add_argument("--slide-size", type=int, default=2048, help="synthetic slide size, px")
    p_frag.add_argument("--patch-size", type=int, help="patch size used for layout validation")
    p_frag.add_argument("--mpp", type=float, help="input slide resolution override")
    p_frag.add_argument("--seed", type=int, help="fragmentation seed (default 0)")
    p_frag.add_argument("--out-dir", default=".", help="output directory")
    p_frag.set_defaults(func=cmd_fragment)

    p_eval = sub.add_parser("evaluate", help="run a synthetic experiment, write CSV report")
    p_eval.add_argument("experiment", help=f"one of: {', '.join(EXPERIMENTS)}")
    p_eval.add_argument("--eval-encoders", help="comma list of encoders (baseline,ncc,oracle,external)")
    p_eval.add_argument("--n-seeds", type=int, default=3, help="number of slide seeds (default 3)")
    p_eval.add_argument("--slide-size", type=int, default=2048, help="synthetic slide size (default 2048)")
    p_eval.add_argument("--sigma", type=float, default=0.0, help="oracle encoder noise (default 0)")
    p_eval.add_argument("--gap", type=float, default=224.0, help="boundary-match gap, microns")
    p_eval.add_argument("--rotate", type=float, default=15.0, help="boundary-match perturbation, degrees")
    p_eval.add_argument("--translate", type=float, default=64.0, help="boundary-match perturbation, px")
    _add_common_flags(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_enc = sub.add_parser("encode", help="serve one SSPB->SSFV request with a built-in encoder")
    p_enc.add_argument("request", help="patches.bin path (SSPB)")
    p_enc.add_argument("response", help="features.bin path to write (SSFV)")
    p_enc.add_argument("--encoder", choices=["baseline", "ncc"], default="baseline")
    p_enc.set_defaults(func=cmd_encode)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SemStitchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Subcommands: plan, extract, confidence, reconstruct (oracle|import), fuse,
eval, run, ablate. ``run``/``ablate`` read a flat ``key = value`` config
file; any config key can be overridden on the command line with
``--<key> <value>`` (overrides win).

Exit codes: 0 success, 2 configuration error, 3 IO error, 4 numerical or
degenerate-input error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import backend as backend_mod
from . import fileio
from .confidence import confidence_map, edge_band, gradient_prior
from .errors import BundleError, ConfigError, DegenerateInputError, InvalidInputError
from .geometry import ErpImage
from .metrics import DepthMetrics
from .pipeline import (compute_fusion_weights, config_from_mapping,
                       evaluate_depth, load_config, run_ablation, run_pipeline)
from .planner import (PlannerConfig, plan_views, score_base_views,
                      viewset_from_json, viewset_to_json)
from .fusion import fuse_to_erp

log = logging.getLogger("panodepth")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _planner_from_args(args) -> PlannerConfig:
    return PlannerConfig(
        n_base=args.n_base, top_k=args.top_k,
        fov=math.radians(args.fov_deg), view_size=args.view_size,
        tau_mode=args.tau_mode, tau_const=args.tau_const)


def _add_planner_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-base", type=int, default=8, help="base view count")
    p.add_argument("--top-k", type=int, default=2,
                   help="most-uncertain views to augment with neighbors")
    p.add_argument("--fov-deg", type=float, default=120.0,
                   help="square view field of view (degrees)")
    p.add_argument("--view-size", type=int, default=518,
                   help="view resolution (pixels per side)")
    p.add_argument("--tau-mode", choices=("robust", "fixed"), default="robust",
                   help="gradient normalization scale mode")
    p.add_argument("--tau-const", type=float, default=1.0,
                   help="fixed tau value (tau-mode=fixed)")


def _load_erp(path: str) -> ErpImage:
    return ErpImage(data=fileio.read_png(path))


def _load_raster(path: str) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return fileio.read_png(path)
    if suffix == ".pfm":
        return fileio.read_pfm(path).astype(np.float64)
    return fileio.read_f32r(path).astype(np.float64)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def cmd_plan(args) -> int:
    erp = _load_erp(args.erp)
    cfg = _planner_from_args(args)
    views = plan_views(erp, cfg)
    Path(args.out).write_text(viewset_to_json(views))
    if args.scores:
        for s in score_base_views(erp, cfg):
            print(f"view {s.view_index}\tscore {s.score:.6f}")
    print(f"wrote {len(views)} views to {args.out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    from .geometry import extract_view

    erp = _load_erp(args.erp)
    views = viewset_from_json(Path(args.views).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, spec in enumerate(views):
        raster, _ = extract_view(erp, spec)
        fileio.write_f32r(out / f"view_{i:03d}.f32r", raster)
        fileio.write_png(out / f"view_{i:03d}.png", raster)
    print(f"extracted {len(views)} views to {out}")
    return EXIT_OK


def cmd_confidence(args) -> int:
    raster = _load_raster(args.view)
    size = raster.shape[0]
    if raster.shape[0] != raster.shape[1]:
        raise InvalidInputError("confidence expects a square view raster")
    mask = np.ones((size, size), dtype=bool)
    m_g = gradient_prior(raster, mask)
    band = edge_band(size, args.margin)
    patch = args.patch if size % args.patch == 0 else 1
    cm = confidence_map(raster, mask, margin=args.margin, patch=patch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_f32r(out / "gradient_prior.f32r", m_g)
    fileio.write_f32r(out / "edge_band.f32r", band)
    fileio.write_f32r(out / "confidence.f32r", cm.pixel)
    side_by_side = np.concatenate([m_g, band, cm.pixel], axis=1)
    fileio.write_png(out / "confidence_panels.png", side_by_side)
    print(f"wrote gradient prior | edge band | confidence panels to {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    if args.mode == "import":
        if not args.bundle:
            raise ConfigError("reconstruct import requires --bundle")
        response, views = backend_mod.import_reconstruction(args.bundle)
        flag = " (rows re-normalized)" if response.renormalized else ""
        print(f"bundle ok: {len(views)} views, "
              f"S={response.observations[0].size}, "
              f"grid={response.attention[0].grid_shape}{flag}")
        return EXIT_OK
    if not args.views or not args.out:
        raise ConfigError("reconstruct oracle requires --views and --out")
    views = viewset_from_json(Path(args.views).read_text())
    size = views.specs[0].size
    scene = backend_mod.SyntheticScene(args.scene, tuple(args.scene_params))
    masks = tuple(np.ones((size, size), dtype=bool) for _ in views)
    rasters = tuple(np.zeros((size, size)) for _ in views)
    grid = (size // args.patch, size // args.patch)
    request = backend_mod.ReconstructorRequest(
        views=views, rasters=rasters, masks=masks, patch_grid=grid)
    response = backend_mod.oracle_reconstruct(
        request, scene, noise_sigma=args.noise_sigma,
        attention_mode=args.attention, seed=args.seed)
    backend_mod.export_bundle(response, views, args.out,
                              write_depth=args.write_depth)
    print(f"wrote oracle bundle ({len(views)} views) to {args.out}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    response, views = backend_mod.import_reconstruction(args.bundle)
    size = response.observations[0].size
    fus = config_from_mapping({
        "fusion.weighting": args.weighting,
        "fusion.sigma_loc": str(args.sigma_loc),
        "fusion.normalization": args.normalization,
    }).fusion
    pixel_weights, _ = compute_fusion_weights(response, size, fus, jobs=args.jobs)
    fused = fuse_to_erp(list(response.observations), pixel_weights, views,
                        (args.height, args.width))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_f32r(out / "fused.f32r", fused.depth)
    fileio.write_pfm(out / "fused.pfm", fused.depth)
    fileio.write_depth_preview(out / "preview.png", fused.depth)
    fileio.write_f32r(out / "weight_sum.f32r", fused.weight_sum)
    fileio.write_f32r(out / "count.f32r", fused.count.astype(np.float64))
    n_invalid = int((~fused.valid).sum())
    print(f"fused {len(views)} views -> {out} ({n_invalid} invalid pixels)")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = _load_raster(args.pred)
    gt = _load_raster(args.gt)
    mask = None
    if args.mask:
        mask = fileio.read_png(args.mask)
        if mask.ndim == 3:
            mask = mask.mean(axis=2)
        mask = mask > 0.5
    metrics = evaluate_depth(pred, gt, align=args.align, mask=mask,
                             cap=args.cap if args.cap > 0 else None)
    print("\t".join(DepthMetrics.TSV_COLUMNS))
    print(metrics.tsv_row())
    return EXIT_OK


def _collect_overrides(extras: list[str]) -> dict[str, str]:
    """Parse trailing ``--config.key value`` pairs into a mapping."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, _, value = key.partition("=")
        else:
            if i + 1 >= len(extras):
                raise ConfigError(f"missing value for override --{key}")
            value = extras[i + 1]
            i += 1
        overrides[key] = value
        i += 1
    return overrides


def cmd_run(args, extras: list[str]) -> int:
    overrides = _collect_overrides(extras)
    if args.out:
        overrides["out_dir"] = args.out
    if args.jobs is not None:
        overrides["jobs"] = str(args.jobs)
    cfg = load_config(args.config, overrides)
    result = run_pipeline(cfg)
    for status in result.stages:
        tag = "cached" if status.cached else f"{status.seconds:.2f}s"
        print(f"stage {status.name:<12} {tag}")
    n_invalid = int((~result.fused.valid).sum())
    print(f"fused depth: {result.out_dir / 'fuse' / 'fused.f32r'} "
          f"({n_invalid} invalid pixels)")
    if result.metrics is not None:
        print("\t".join(DepthMetrics.TSV_COLUMNS))
        print(result.metrics.tsv_row())
    return EXIT_OK


def cmd_ablate(args, extras: list[str]) -> int:
    overrides = _collect_overrides(extras)
    if args.out:
        overrides["out_dir"] = args.out
    if args.jobs is not None:
        overrides["jobs"] = str(args.jobs)
    cfg = load_config(args.config, overrides)
    rows = run_ablation(cfg)
    print(f"{'group':<12} {'method':<16} {'abs_rel':>9} {'rmse':>9} "
          f"{'d1':>7} {'time':>7}")
    for row in rows:
        m = row.metrics
        print(f"{row.group:<12} {row.method:<16} {m.abs_rel:>9.4f} "
              f"{m.rmse:>9.4f} {m.delta1:>7.4f} {row.seconds:>6.2f}s")
    print(f"table: {cfg.resolved_out_dir / 'ablation.tsv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panodepth",
        description="Panorama-to-perspective depth pipeline: plan views, "
                    "reconstruct via a pluggable backend, fuse back to ERP.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="score base views and emit the view set")
    p.add_argument("--erp", required=True, help="input panorama PNG (2:1)")
    p.add_argument("--out", required=True, help="output views.json")
    p.add_argument("--scores", action="store_true", help="print view scores")
    _add_planner_args(p)

    p = sub.add_parser("extract", help="slice perspective views from a panorama")
    p.add_argument("--erp", required=True)
    p.add_argument("--views", required=True, help="views.json from `plan`")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("confidence",
                       help="render gradient prior, edge band, and confidence")
    p.add_argument("--view", required=True, help="square view raster (png/f32r)")
    p.add_argument("--out", required=True)
    p.add_argument("--margin", type=float, default=0.05, help="edge-band width")
    p.add_argument("--patch", type=int, default=14, help="patch size (pooling)")

    p = sub.add_parser("reconstruct", help="run a backend (oracle or import)")
    p.add_argument("mode", choices=("oracle", "import"))
    p.add_argument("--views", help="views.json (oracle mode)")
    p.add_argument("--out", help="output bundle directory (oracle mode)")
    p.add_argument("--bundle", help="bundle to validate (import mode)")
    p.add_argument("--scene", choices=("sphere", "box", "corner"), default="box")
    p.add_argument("--scene-params", type=float, nargs="+",
                   default=[1.0, 1.0, 1.25, 1.25, 1.5, 1.5],
                   help="sphere: radius; box: 6 plane distances; corner: 2")
    p.add_argument("--attention",
                   choices=backend_mod.ATTENTION_MODES, default="distance-decay")
    p.add_argument("--noise-sigma", type=float, default=0.0,
                   help="relative depth noise std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch", type=int, default=14)
    p.add_argument("--write-depth", action="store_true",
                   help="also export per-view distance rasters")

    p = sub.add_parser("fuse", help="fuse a bundle into an ERP depth map")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--weighting", choices=("correlation", "uniform"),
                   default="correlation")
    p.add_argument("--sigma-loc", type=float, default=0.0,
                   help="locality kernel bandwidth (0 = auto)")
    p.add_argument("--normalization", choices=("per-view", "global"),
                   default="per-view")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("eval", help="score a depth prediction against GT")
    p.add_argument("--pred", required=True, help="pfm/f32r prediction")
    p.add_argument("--gt", required=True, help="pfm/f32r ground truth")
    p.add_argument("--mask", help="optional validity mask PNG (nonzero=valid)")
    p.add_argument("--align", choices=("median", "lstsq", "none"),
                   default="median")
    p.add_argument("--cap", type=float, default=0.0,
                   help="drop pixels with gt above this (0 = no cap)")

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--jobs", type=int, help="parallel per-view workers")

    p = sub.add_parser("ablate", help="run the module-toggle ablation matrix")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--jobs", type=int)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args, extras)
        if args.command == "ablate":
            return cmd_ablate(args, extras)
        if extras:
            raise ConfigError(f"unrecognized arguments: {' '.join(extras)}")
        if args.command == "plan":
            return cmd_plan(args)
        if args.command == "extract":
            return cmd_extract(args)
        if args.command == "confidence":
            return cmd_confidence(args)
        if args.command == "reconstruct":
            return cmd_reconstruct(args)
        if args.command == "fuse":
            return cmd_fuse(args)
        if args.command == "eval":
            return cmd_eval(args)
        raise AssertionError(args.command)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (BundleError, OSError) as e:
        log.error("io error: %s", e)
        return EXIT_IO
    except (InvalidInputError, DegenerateInputError) as e:
        log.error("numerical error: %s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

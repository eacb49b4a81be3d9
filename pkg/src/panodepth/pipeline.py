"""Pipeline orchestration: plan -> extract -> confidence -> reconstruct ->
fuse -> eval, with per-stage content-addressed caching and an ablation
driver.

Every stage writes its artifacts under ``<out_dir>/<stage>/`` together with
a ``_stage.json`` carrying the stage's config hash; re-running with an
unchanged configuration loads the artifacts instead of recomputing. Data
handed between stages is canonicalized to float32 (the on-disk precision),
so a resumed run is byte-identical to a fresh one.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import backend as backend_mod
from . import fileio
from .confidence import ConfidenceMap, confidence_map
from .errors import ConfigError, PanodepthError
from .fusion import (FusedErpDepth, fuse_to_erp, minmax_normalize, sharpness,
                     locality, symmetry, combine_weights)
from .geometry import ErpImage, ViewSet
from .metrics import DepthMetrics, align_lstsq, align_median, compute_metrics
from .planner import PlannerConfig, plan_views, score_base_views, viewset_from_json, viewset_to_json

PACKAGE_VERSION = "0.1.0"
OUT_DIR_ENV = "PANODEPTH_OUT_DIR"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfidenceConfig:
    enabled: bool = True
    margin: float = 0.05
    patch: int = 14
    use_gradient: bool = True
    use_edge_band: bool = True
    use_validity: bool = True

    def __post_init__(self):
        if not (0.0 < self.margin < 1.0):
            raise ConfigError("confidence.margin must be in (0, 1)")
        if self.patch < 1:
            raise ConfigError("confidence.patch must be >= 1")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "oracle"          # oracle | import
    bundle: str = ""
    scene: str = "box"            # sphere | box | corner
    scene_params: tuple[float, ...] = (1.0, 1.0, 1.25, 1.25, 1.5, 1.5)
    attention: str = "distance-decay"
    noise_sigma: float = 0.0
    blank_faces: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("oracle", "import"):
            raise ConfigError(f"backend.kind must be oracle|import, got {self.kind!r}")
        if self.kind == "import" and not self.bundle:
            raise ConfigError("backend.kind=import requires backend.bundle")
        if self.attention not in backend_mod.ATTENTION_MODES:
            raise ConfigError(f"unknown backend.attention {self.attention!r}")
        if self.noise_sigma < 0:
            raise ConfigError("backend.noise_sigma must be >= 0")

    def make_scene(self) -> backend_mod.SyntheticScene:
        return backend_mod.SyntheticScene(self.scene, self.scene_params)


@dataclass(frozen=True)
class FusionConfig:
    weighting: str = "correlation"   # correlation | uniform
    use_sharp: bool = True
    use_loc: bool = True
    use_sym: bool = True
    sigma_loc: float = 0.0           # 0 -> 0.15 x patch-grid diagonal
    normalization: str = "per-view"  # per-view | global

    def __post_init__(self):
        if self.weighting not in ("correlation", "uniform"):
            raise ConfigError("fusion.weighting must be correlation|uniform")
        if self.normalization not in ("per-view", "global"):
            raise ConfigError("fusion.normalization must be per-view|global")
        if self.sigma_loc < 0:
            raise ConfigError("fusion.sigma_loc must be >= 0")


@dataclass(frozen=True)
class EvalConfig:
    align: str = "median"  # median | lstsq | none
    cap: float = 0.0       # 0 -> no depth cap
    gt: str = ""           # external ground-truth raster (pfm/f32r)

    def __post_init__(self):
        if self.align not in ("median", "lstsq", "none"):
            raise ConfigError("eval.align must be median|lstsq|none")
        if self.cap < 0:
            raise ConfigError("eval.cap must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    input_erp: str = ""
    erp_height: int = 512
    erp_width: int = 1024
    erp_allow_non_2to1: bool = False
    out_dir: str = ""
    seed: int = 0
    jobs: int = 1
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.erp_height < 2 or self.erp_width < 4:
            raise ConfigError("ERP raster dimensions too small")
        if not self.erp_allow_non_2to1 and self.erp_width != 2 * self.erp_height:
            raise ConfigError("ERP raster must be 2:1 "
                              "(set erp_allow_non_2to1=true to relax)")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.planner.view_size % self.confidence.patch != 0:
            raise ConfigError(
                f"view size {self.planner.view_size} is not a multiple of "
                f"patch {self.confidence.patch}")

    @property
    def resolved_out_dir(self) -> Path:
        if self.out_dir:
            return Path(self.out_dir)
        return Path(os.environ.get(OUT_DIR_ENV, "out"))

    @property
    def patch_grid(self) -> tuple[int, int]:
        g = self.planner.view_size // self.confidence.patch
        return (g, g)


# Flat key table: dotted config key -> (section, field, type tag).
# Type tags: str, int, float, bool, floats (comma list), strs (comma list),
# deg (degrees stored as radians).
_KEYS: dict[str, tuple[str | None, str, str]] = {
    "input_erp": (None, "input_erp", "str"),
    "erp_height": (None, "erp_height", "int"),
    "erp_width": (None, "erp_width", "int"),
    "erp_allow_non_2to1": (None, "erp_allow_non_2to1", "bool"),
    "out_dir": (None, "out_dir", "str"),
    "seed": (None, "seed", "int"),
    "jobs": (None, "jobs", "int"),
    "planner.n_base": ("planner", "n_base", "int"),
    "planner.top_k": ("planner", "top_k", "int"),
    "planner.fov_deg": ("planner", "fov", "deg"),
    "planner.view_size": ("planner", "view_size", "int"),
    "planner.tau_mode": ("planner", "tau_mode", "str"),
    "planner.tau_const": ("planner", "tau_const", "float"),
    "confidence.enabled": ("confidence", "enabled", "bool"),
    "confidence.margin": ("confidence", "margin", "float"),
    "confidence.patch": ("confidence", "patch", "int"),
    "confidence.use_gradient": ("confidence", "use_gradient", "bool"),
    "confidence.use_edge_band": ("confidence", "use_edge_band", "bool"),
    "confidence.use_validity": ("confidence", "use_validity", "bool"),
    "backend.kind": ("backend", "kind", "str"),
    "backend.bundle": ("backend", "bundle", "str"),
    "backend.scene": ("backend", "scene", "str"),
    "backend.scene_params": ("backend", "scene_params", "floats"),
    "backend.attention": ("backend", "attention", "str"),
    "backend.noise_sigma": ("backend", "noise_sigma", "float"),
    "backend.blank_faces": ("backend", "blank_faces", "strs"),
    "fusion.weighting": ("fusion", "weighting", "str"),
    "fusion.use_sharp": ("fusion", "use_sharp", "bool"),
    "fusion.use_loc": ("fusion", "use_loc", "bool"),
    "fusion.use_sym": ("fusion", "use_sym", "bool"),
    "fusion.sigma_loc": ("fusion", "sigma_loc", "float"),
    "fusion.normalization": ("fusion", "normalization", "str"),
    "eval.align": ("eval", "align", "str"),
    "eval.cap": ("eval", "cap", "float"),
    "eval.gt": ("eval", "gt", "str"),
}


def _parse_value(tag: str, raw: str):
    raw = raw.strip()
    if tag == "str":
        return raw
    if tag == "int":
        return int(raw)
    if tag == "float":
        return float(raw)
    if tag == "deg":
        return math.radians(float(raw))
    if tag == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if tag == "floats":
        return tuple(float(x) for x in raw.split(",") if x.strip()) if raw else ()
    if tag == "strs":
        return tuple(x.strip() for x in raw.split(",") if x.strip()) if raw else ()
    raise AssertionError(tag)


def _format_value(tag: str, value) -> str:
    if tag == "deg":
        return repr(math.degrees(value))
    if tag == "bool":
        return "true" if value else "false"
    if tag in ("floats", "strs"):
        return ",".join(str(x) for x in value)
    return str(value)


def config_from_mapping(entries: dict[str, str]) -> PipelineConfig:
    """Build a validated config from flat string key/value pairs."""
    top: dict = {}
    sections: dict[str, dict] = {"planner": {}, "confidence": {}, "backend": {},
                                 "fusion": {}, "eval": {}}
    for key, raw in entries.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        section, attr, tag = _KEYS[key]
        try:
            value = _parse_value(tag, raw)
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from e
        if section is None:
            top[attr] = value
        else:
            sections[section][attr] = value
    return PipelineConfig(
        planner=PlannerConfig(**sections["planner"]),
        confidence=ConfidenceConfig(**sections["confidence"]),
        backend=BackendConfig(**sections["backend"]),
        fusion=FusionConfig(**sections["fusion"]),
        eval=EvalConfig(**sections["eval"]),
        **top,
    )


def config_to_mapping(cfg: PipelineConfig) -> dict[str, str]:
    """Flat string mapping of every key (defaults materialized)."""
    out = {}
    for key, (section, attr, tag) in _KEYS.items():
        obj = cfg if section is None else getattr(cfg, section)
        out[key] = _format_value(tag, getattr(obj, attr))
    return out


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file with ``#`` comments."""
    entries: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def load_config(path: str | Path | None = None,
                overrides: dict[str, str] | None = None) -> PipelineConfig:
    """Config file plus command-line overrides; overrides win."""
    entries = parse_config_file(path) if path else {}
    if overrides:
        entries.update(overrides)
    return config_from_mapping(entries)


# ---------------------------------------------------------------------------
# Stage framework
# ---------------------------------------------------------------------------


@dataclass
class StageStatus:
    name: str
    digest: str
    cached: bool
    seconds: float


@dataclass
class RunResult:
    config: PipelineConfig
    out_dir: Path
    fused: FusedErpDepth
    metrics: DepthMetrics | None
    stages: list[StageStatus]

    def stage_cached(self, name: str) -> bool:
        return next(s.cached for s in self.stages if s.name == name)


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(json.dumps(part, sort_keys=True, default=str).encode())
        h.update(b"\x00")
    return h.hexdigest()


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _cfg_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _run_stage(out_root: Path, name: str, digest: str, outputs: list[str],
               compute, load, stages: list[StageStatus]):
    """Run or reload one cached stage.

    ``compute(stage_dir)`` builds artifacts and returns the stage value;
    ``load(stage_dir)`` rebuilds the value from artifacts.
    """
    sdir = out_root / name
    meta = sdir / "_stage.json"
    t0 = time.perf_counter()
    if meta.is_file():
        try:
            recorded = json.loads(meta.read_text()).get("hash")
        except (json.JSONDecodeError, OSError):
            recorded = None
        if recorded == digest and all((sdir / o).exists() for o in outputs):
            value = load(sdir)
            stages.append(StageStatus(name, digest, True,
                                      time.perf_counter() - t0))
            return value
    if sdir.exists():
        shutil.rmtree(sdir)
    sdir.mkdir(parents=True)
    value = compute(sdir)
    meta.write_text(json.dumps({"stage": name, "hash": digest}))
    stages.append(StageStatus(name, digest, False, time.perf_counter() - t0))
    return value


def _map_views(stage: str, fn, n: int, jobs: int) -> list:
    """Run fn(i) for every view index, preserving order; errors carry the
    stage name and view index."""

    def guarded(i):
        try:
            return fn(i)
        except PanodepthError as e:
            raise type(e)(f"[stage {stage}, view {i}] {e}") from e

    if jobs <= 1 or n <= 1:
        return [guarded(i) for i in range(n)]
    results = [None] * n
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(guarded, i): i for i in range(n)}
        for fut in futures:
            results[futures[fut]] = fut.result()
    return results


def _f32(arr: np.ndarray) -> np.ndarray:
    """Canonical float32 precision handoff (as a float64 array)."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _stage_input(cfg: PipelineConfig, out_root, stages) -> tuple[ErpImage, str]:
    dims = (cfg.erp_height, cfg.erp_width)
    if cfg.input_erp:
        src = Path(cfg.input_erp)
        if not src.is_file():
            raise OSError(f"input ERP not found: {src}")
        digest = _digest("input-file", _file_digest(src), cfg.erp_allow_non_2to1)

        def compute(sdir: Path):
            data = fileio.read_png(src)
            shutil.copyfile(src, sdir / "erp.png")
            return ErpImage(data=data, require_2to1=not cfg.erp_allow_non_2to1)

        def load(sdir: Path):
            return ErpImage(data=fileio.read_png(sdir / "erp.png"),
                            require_2to1=not cfg.erp_allow_non_2to1)
    else:
        if cfg.backend.kind != "oracle":
            raise ConfigError("input_erp is required unless backend.kind=oracle")
        scene_desc = _cfg_dict(cfg.backend)
        digest = _digest("input-synth", scene_desc, dims, cfg.seed)

        def compute(sdir: Path):
            erp = backend_mod.render_erp_texture(
                cfg.backend.make_scene(), dims, seed=cfg.seed,
                blank_faces=cfg.backend.blank_faces)
            fileio.write_png(sdir / "erp.png", erp.data)
            # canonical form is the 8-bit PNG that was just written
            return ErpImage(data=fileio.read_png(sdir / "erp.png"),
                            require_2to1=not cfg.erp_allow_non_2to1)

        def load(sdir: Path):
            return ErpImage(data=fileio.read_png(sdir / "erp.png"),
                            require_2to1=not cfg.erp_allow_non_2to1)

    erp = _run_stage(out_root, "input", digest, ["erp.png"], compute, load, stages)
    return erp, digest


def _stage_plan(cfg, erp, parent_digest, out_root, stages) -> tuple[ViewSet, str]:
    digest = _digest("plan", parent_digest, _cfg_dict(cfg.planner))

    def compute(sdir: Path):
        views = plan_views(erp, cfg.planner)
        (sdir / "views.json").write_text(viewset_to_json(views))
        scores = score_base_views(erp, cfg.planner) if cfg.planner.top_k > 0 else []
        (sdir / "scores.json").write_text(json.dumps(
            [{"view": s.view_index, "score": s.score} for s in scores], indent=2))
        return views

    def load(sdir: Path):
        return viewset_from_json((sdir / "views.json").read_text())

    views = _run_stage(out_root, "plan", digest, ["views.json", "scores.json"],
                       compute, load, stages)
    return views, digest


def _stage_extract(cfg, erp, views, parent_digest, out_root, stages):
    from .geometry import extract_view

    digest = _digest("extract", parent_digest)
    names = [f"view_{i:03d}.f32r" for i in range(len(views))]

    def compute(sdir: Path):
        def one(i):
            raster, _ = extract_view(erp, views.specs[i])
            fileio.write_f32r(sdir / names[i], raster)
            fileio.write_png(sdir / f"view_{i:03d}.png", raster)
            return _f32(raster)

        return _map_views("extract", one, len(views), cfg.jobs)

    def load(sdir: Path):
        return [fileio.read_f32r(sdir / n).astype(np.float64) for n in names]

    rasters = _run_stage(out_root, "extract", digest, names, compute, load, stages)
    return rasters, digest


def _stage_confidence(cfg, views, rasters, parent_digest, out_root, stages):
    digest = _digest("confidence", parent_digest, _cfg_dict(cfg.confidence))
    names = [f"conf_px_{i:03d}.f32r" for i in range(len(views))]
    names += [f"conf_patch_{i:03d}.f32r" for i in range(len(views))]
    cc = cfg.confidence

    def make(i, raster):
        mask = np.ones(raster.shape[:2], dtype=bool)
        return confidence_map(
            raster, mask, margin=cc.margin, patch=cc.patch,
            tau_mode=cfg.planner.tau_mode, tau_const=cfg.planner.tau_const,
            use_gradient=cc.use_gradient, use_edge_band=cc.use_edge_band,
            use_validity=cc.use_validity)

    def compute(sdir: Path):
        def one(i):
            cm = make(i, rasters[i])
            fileio.write_f32r(sdir / f"conf_px_{i:03d}.f32r", cm.pixel)
            fileio.write_f32r(sdir / f"conf_patch_{i:03d}.f32r", cm.patch)
            return ConfidenceMap(pixel=_f32(cm.pixel), patch=_f32(cm.patch),
                                 grid_shape=cm.grid_shape)

        return _map_views("confidence", one, len(views), cfg.jobs)

    def load(sdir: Path):
        out = []
        for i in range(len(views)):
            px = fileio.read_f32r(sdir / f"conf_px_{i:03d}.f32r").astype(np.float64)
            patch = fileio.read_f32r(sdir / f"conf_patch_{i:03d}.f32r").astype(np.float64)
            out.append(ConfidenceMap(pixel=px, patch=patch, grid_shape=patch.shape))
        return out

    confs = _run_stage(out_root, "confidence", digest, names, compute, load, stages)
    return confs, digest


def _stage_reconstruct(cfg, views, rasters, confs, parent_digest, out_root, stages):
    digest = _digest("reconstruct", parent_digest, _cfg_dict(cfg.backend), cfg.seed)
    outputs = ["bundle/manifest.json"]
    outputs += [f"bundle/view_{i:03d}.points.f32r" for i in range(len(views))]
    outputs += [f"bundle/view_{i:03d}.attn.f32r" for i in range(len(views))]

    def compute(sdir: Path):
        size = cfg.planner.view_size
        masks = tuple(np.ones((size, size), dtype=bool) for _ in views)
        patch_conf = None
        if confs is not None:
            patch_conf = tuple(c.patch.ravel() for c in confs)
        request = backend_mod.ReconstructorRequest(
            views=views, rasters=tuple(rasters), masks=masks,
            patch_confidence=patch_conf, patch_grid=cfg.patch_grid)
        response = backend_mod.oracle_reconstruct(
            request, cfg.backend.make_scene(),
            noise_sigma=cfg.backend.noise_sigma,
            attention_mode=cfg.backend.attention, seed=cfg.seed)
        backend_mod.export_bundle(response, views, sdir / "bundle")
        # the bundle is the seam: downstream always consumes the imported form
        imported, _ = backend_mod.import_reconstruction(sdir / "bundle")
        return imported

    def load(sdir: Path):
        imported, _ = backend_mod.import_reconstruction(sdir / "bundle")
        return imported

    response = _run_stage(out_root, "reconstruct", digest, outputs,
                          compute, load, stages)
    return response, digest


def compute_fusion_weights(response, size: int, fus_cfg: FusionConfig,
                           jobs: int = 1) -> tuple[list[np.ndarray], list | None]:
    """Per-view pixel weight rasters for fusion.

    Uniform weighting returns all-ones rasters; correlation weighting runs
    the sharpness/locality/symmetry pipeline per view with per-view or
    global min-max normalization.
    """
    n = len(response.observations)
    if fus_cfg.weighting == "uniform":
        return [np.ones((size, size)) for _ in range(n)], None
    sigma = fus_cfg.sigma_loc if fus_cfg.sigma_loc > 0 else None

    def metric_vectors(i):
        attn = response.attention[i]
        t = attn.tokens
        sharp = sharpness(attn) if fus_cfg.use_sharp else np.zeros(t)
        loc = locality(attn, sigma=sigma) if fus_cfg.use_loc else np.zeros(t)
        sym = symmetry(attn) if fus_cfg.use_sym else np.zeros(t)
        return sharp, loc, sym

    vectors = _map_views("fuse", metric_vectors, n, jobs)
    ranges = None
    if fus_cfg.normalization == "global":
        allv = {name: np.concatenate([v[j] for v in vectors])
                for j, name in enumerate(("sharp", "loc", "sym"))}
        ranges = {name: (float(a.min()), float(a.max()))
                  for name, a in allv.items()}
        totals = [minmax_normalize(v[0], ranges["sharp"])
                  + minmax_normalize(v[1], ranges["loc"])
                  + minmax_normalize(v[2], ranges["sym"]) for v in vectors]
        ranges["sum"] = (float(min(t.min() for t in totals)),
                         float(max(t.max() for t in totals)))

    def one(i):
        attn = response.attention[i]
        cw = combine_weights(*vectors[i], attn.grid_shape, size, ranges=ranges)
        return cw

    weights = _map_views("fuse", one, n, jobs)
    return [w.pixel for w in weights], weights


def _stage_fuse(cfg, response, views, parent_digest, out_root, stages):
    digest = _digest("fuse", parent_digest, _cfg_dict(cfg.fusion),
                     (cfg.erp_height, cfg.erp_width))
    n = len(response.observations)
    outputs = ["fused.f32r", "fused.pfm", "preview.png",
               "weight_sum.f32r", "count.f32r"]
    outputs += [f"weight_{i:03d}.f32r" for i in range(n)]
    dims = (cfg.erp_height, cfg.erp_width)
    size = response.observations[0].size

    def compute(sdir: Path):
        pixel_weights, _ = compute_fusion_weights(response, size, cfg.fusion,
                                                  jobs=cfg.jobs)
        fused = fuse_to_erp(list(response.observations), pixel_weights,
                            views, dims)
        fileio.write_f32r(sdir / "fused.f32r", fused.depth)
        fileio.write_pfm(sdir / "fused.pfm", fused.depth)
        fileio.write_depth_preview(sdir / "preview.png", fused.depth)
        fileio.write_f32r(sdir / "weight_sum.f32r", fused.weight_sum)
        fileio.write_f32r(sdir / "count.f32r", fused.count.astype(np.float64))
        for i, w in enumerate(pixel_weights):
            fileio.write_f32r(sdir / f"weight_{i:03d}.f32r", w)
        return FusedErpDepth(depth=_f32(fused.depth),
                             weight_sum=_f32(fused.weight_sum),
                             count=fused.count)

    def load(sdir: Path):
        depth = fileio.read_f32r(sdir / "fused.f32r").astype(np.float64)
        wsum = fileio.read_f32r(sdir / "weight_sum.f32r").astype(np.float64)
        count = fileio.read_f32r(sdir / "count.f32r").astype(np.int32)
        return FusedErpDepth(depth=depth, weight_sum=wsum, count=count)

    fused = _run_stage(out_root, "fuse", digest, outputs, compute, load, stages)
    return fused, digest


def _load_depth_raster(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".pfm":
        return fileio.read_pfm(path).astype(np.float64)
    return fileio.read_f32r(path).astype(np.float64)


def _stage_eval(cfg, fused, parent_digest, out_root, stages):
    if cfg.eval.gt:
        gt_path = Path(cfg.eval.gt)
        if not gt_path.is_file():
            raise OSError(f"ground-truth raster not found: {gt_path}")
        gt_part = _file_digest(gt_path)
    elif cfg.backend.kind == "oracle":
        gt_part = "oracle"
    else:
        return None, parent_digest  # nothing to evaluate against
    digest = _digest("eval", parent_digest, _cfg_dict(cfg.eval), gt_part)
    dims = (cfg.erp_height, cfg.erp_width)

    def compute(sdir: Path):
        if cfg.eval.gt:
            gt = _load_depth_raster(Path(cfg.eval.gt))
        else:
            gt = backend_mod.render_erp_groundtruth(
                cfg.backend.make_scene(), dims).data
        gt = _f32(gt)
        fileio.write_f32r(sdir / "gt.f32r", gt)
        metrics = evaluate_depth(fused.depth, gt, align=cfg.eval.align,
                                 cap=cfg.eval.cap if cfg.eval.cap > 0 else None)
        (sdir / "metrics.json").write_text(json.dumps(_cfg_dict(metrics)))
        header = "\t".join(DepthMetrics.TSV_COLUMNS)
        (sdir / "metrics.tsv").write_text(header + "\n" + metrics.tsv_row() + "\n")
        return metrics

    def load(sdir: Path):
        return DepthMetrics(**json.loads((sdir / "metrics.json").read_text()))

    metrics = _run_stage(out_root, "eval", digest,
                         ["gt.f32r", "metrics.tsv", "metrics.json"],
                         compute, load, stages)
    return metrics, digest


def evaluate_depth(pred: np.ndarray, gt: np.ndarray, *, align: str = "median",
                   mask: np.ndarray | None = None,
                   cap: float | None = None) -> DepthMetrics:
    """Align (optionally) and score a depth prediction."""
    scale = 1.0
    if align == "median":
        pred, scale = align_median(pred, gt, mask)
    elif align == "lstsq":
        pred, scale = align_lstsq(pred, gt, mask)
    return compute_metrics(pred, gt, mask, cap=cap, scale=scale)


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------


def run_pipeline(cfg: PipelineConfig) -> RunResult:
    """Execute the full pipeline; every stage is cached by config hash."""
    out_root = cfg.resolved_out_dir
    out_root.mkdir(parents=True, exist_ok=True)
    stages: list[StageStatus] = []

    if cfg.backend.kind == "import":
        response, views = backend_mod.import_reconstruction(cfg.backend.bundle)
        man = Path(cfg.backend.bundle) / "manifest.json"
        digest = _digest("import", _file_digest(man),
                         sorted(p.name for p in Path(cfg.backend.bundle).iterdir()))
    else:
        erp, digest = _stage_input(cfg, out_root, stages)
        views, digest = _stage_plan(cfg, erp, digest, out_root, stages)
        rasters, digest = _stage_extract(cfg, erp, views, digest, out_root, stages)
        confs = None
        if cfg.confidence.enabled:
            confs, digest = _stage_confidence(cfg, views, rasters, digest,
                                              out_root, stages)
        else:
            digest = _digest("confidence-disabled", digest)
        response, digest = _stage_reconstruct(cfg, views, rasters, confs,
                                              digest, out_root, stages)

    fused, digest = _stage_fuse(cfg, response, views, digest, out_root, stages)
    metrics, digest = _stage_eval(cfg, fused, digest, out_root, stages)

    manifest = {
        "package_version": PACKAGE_VERSION,
        "config": config_to_mapping(cfg),
        "stage_hashes": {s.name: s.digest for s in stages},
        "view_count": len(views),
    }
    (out_root / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                       sort_keys=True))
    (out_root / "stage_log.json").write_text(json.dumps(
        [{"stage": s.name, "cached": s.cached, "seconds": s.seconds}
         for s in stages], indent=2))
    return RunResult(config=cfg, out_dir=out_root, fused=fused,
                     metrics=metrics, stages=stages)


# ---------------------------------------------------------------------------
# Ablation matrix
# ---------------------------------------------------------------------------


ATTENTION_ROWS = (
    ("baseline", {}),
    ("+Mg", {"use_gradient": True, "use_edge_band": False, "use_validity": False}),
    ("+Mg+E", {"use_gradient": True, "use_edge_band": True, "use_validity": False}),
    ("+Mg+E+valid", {"use_gradient": True, "use_edge_band": True,
                     "use_validity": True}),
)

CORRELATION_ROWS = (
    ("baseline", {}),
    ("+sharp", {"use_sharp": True, "use_loc": False, "use_sym": False}),
    ("+loc", {"use_sharp": False, "use_loc": True, "use_sym": False}),
    ("+sym", {"use_sharp": False, "use_loc": False, "use_sym": True}),
    ("+sharp+loc+sym", {"use_sharp": True, "use_loc": True, "use_sym": True}),
)


@dataclass(frozen=True)
class AblationRow:
    group: str
    method: str
    metrics: DepthMetrics
    seconds: float


def _ablation_cells(cfg: PipelineConfig):
    """(group, method, config) cells mirroring the module-toggle table."""
    base = replace(
        cfg,
        confidence=replace(cfg.confidence, enabled=False),
        fusion=replace(cfg.fusion, weighting="uniform"),
    )
    cells = []
    for method, conf_kw in ATTENTION_ROWS:
        cell = base if method == "baseline" else replace(
            base, confidence=replace(cfg.confidence, enabled=True, **conf_kw))
        cells.append(("attention", method, cell))
    for method, fus_kw in CORRELATION_ROWS:
        cell = base if method == "baseline" else replace(
            base, fusion=replace(cfg.fusion, weighting="correlation", **fus_kw))
        cells.append(("correlation", method, cell))
    for top_k in sorted({0, cfg.planner.top_k}):
        cell = replace(cfg, planner=replace(cfg.planner, top_k=top_k))
        cells.append(("projection", f"K={top_k}", cell))
    return cells


def run_ablation(cfg: PipelineConfig) -> list[AblationRow]:
    """Run the module-toggle matrix on one scene and emit a TSV table.

    Identical cells (the shared baselines) are executed once. Output lands
    under ``<out_dir>/ablate/<group>-<method>/`` with the summary at
    ``<out_dir>/ablation.tsv``.
    """
    if cfg.backend.kind != "oracle" and not cfg.eval.gt:
        raise ConfigError("ablation needs ground truth: oracle backend or eval.gt")
    out_root = cfg.resolved_out_dir
    rows: list[AblationRow] = []
    seen: dict[str, tuple[DepthMetrics, float]] = {}
    for group, method, cell in _ablation_cells(cfg):
        slug = f"{group}-{method}".replace("+", "p").replace("=", "")
        cell = replace(cell, out_dir=str(out_root / "ablate" / slug))
        key = _digest(config_to_mapping(replace(cell, out_dir="", jobs=1)))
        if key in seen:
            metrics, seconds = seen[key]
        else:
            t0 = time.perf_counter()
            result = run_pipeline(cell)
            seconds = time.perf_counter() - t0
            metrics = result.metrics
            seen[key] = (metrics, seconds)
        rows.append(AblationRow(group=group, method=method, metrics=metrics,
                                seconds=seconds))
    header = "group\tmethod\t" + "\t".join(DepthMetrics.TSV_COLUMNS) + "\ttime_s"
    lines = [header]
    for row in rows:
        lines.append(f"{row.group}\t{row.method}\t{row.metrics.tsv_row()}"
                     f"\t{row.seconds:.3f}")
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "ablation.tsv").write_text("\n".join(lines) + "\n")
    return rows

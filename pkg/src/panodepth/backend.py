"""Pluggable multi-view reconstructor backends.

Two implementations of the reconstructor contract:

  * an analytic synthetic-scene oracle (sphere / box room / two-plane
    corner) that emits exact 3-D point maps, optional seeded depth noise,
    and synthetic attention tensors;
  * a file importer/exporter for externally produced bundles
    (``manifest.json`` + per-view F32R point maps and attention tensors),
    the integration seam for real multi-view reconstructors.

The oracle's noise and distance-decayed attention both degrade toward the
view periphery (noise std grows, attention widens), modelling the border
falloff of real perspective reconstructors; this makes attention-derived
reliability genuinely informative about sample quality.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .confidence import AttentionTensor, biased_softmax_attention
from .errors import BundleError, ConfigError, InvalidInputError
from .fusion import PointMapObservation, token_coords
from .geometry import ErpImage, ViewSet, ViewSpec, erp_pixel_grid_dirs, view_pixel_grid_dirs
from . import fileio

BUNDLE_FORMAT_VERSION = 1

ATTENTION_MODES = ("uniform", "one-hot", "distance-decay")

# Distance-decay attention defaults: base bandwidth in patch units, widened
# toward the view border by the periphery gain.
ATTN_SIGMA_BASE = 2.0
ATTN_PERIPHERY_GAIN = 2.0

# Depth-noise periphery gain: relative noise std scales by (1 + g * rho^2)
# with rho = max(|x|, |y|) in normalized view coordinates.
NOISE_PERIPHERY_GAIN = 3.0


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticScene:
    """Closed or open analytic scene around the panorama center.

    kinds:
      * ``sphere``: radius ``params[0]``;
      * ``box``: plane distances (x+, x-, y+, y-, z+, z-), all > 0;
      * ``corner``: two walls, z = params[0] and x = params[1]; rays that
        hit neither are invalid.
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("sphere", "box", "corner"):
            raise ConfigError(f"unknown scene kind {self.kind!r}")
        p = tuple(float(x) for x in self.params)
        need = {"sphere": 1, "box": 6, "corner": 2}[self.kind]
        if len(p) != need:
            raise ConfigError(f"{self.kind} scene needs {need} parameters")
        if any(x <= 0 for x in p):
            raise ConfigError("scene distances must be positive "
                              "(center strictly inside)")
        object.__setattr__(self, "params", p)

    @staticmethod
    def unit_sphere() -> "SyntheticScene":
        return SyntheticScene("sphere", (1.0,))

    @staticmethod
    def box_room(x_extent: float, z_extent: float, y_extent: float) -> "SyntheticScene":
        """Axis-aligned room of full extents (width x, depth z, height y)
        centered on the panorama."""
        return SyntheticScene("box", (x_extent / 2, x_extent / 2,
                                      y_extent / 2, y_extent / 2,
                                      z_extent / 2, z_extent / 2))

    @property
    def closed(self) -> bool:
        return self.kind in ("sphere", "box")


def ray_distances(scene: SyntheticScene, dirs: np.ndarray) -> np.ndarray:
    """Analytic hit distance for unit rays from the origin; NaN on a miss
    (only possible for open scenes)."""
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if scene.kind == "sphere":
        return np.full(d.shape[0], scene.params[0])
    inf = np.inf
    if scene.kind == "box":
        xp, xn, yp, yn, zp, zn = scene.params
        t = np.full(d.shape[0], inf)
        for axis, (pos, neg) in enumerate(((xp, xn), (yp, yn), (zp, zn))):
            comp = d[:, axis]
            with np.errstate(divide="ignore"):
                t_axis = np.where(comp > 0, pos / comp,
                                  np.where(comp < 0, neg / (-comp), inf))
            t = np.minimum(t, t_axis)
        return t
    # corner: walls z = params[0] (hit when dz > 0) and x = params[1]
    zwall, xwall = scene.params
    with np.errstate(divide="ignore"):
        tz = np.where(d[:, 2] > 0, zwall / d[:, 2], inf)
        tx = np.where(d[:, 0] > 0, xwall / d[:, 0], inf)
    t = np.minimum(tz, tx)
    return np.where(np.isfinite(t), t, np.nan)


def render_erp_groundtruth(scene: SyntheticScene,
                           erp_dims: tuple[int, int]) -> ErpImage:
    """Analytic per-pixel ray-cast distance raster (the evaluation GT)."""
    h, w = erp_dims
    dirs = erp_pixel_grid_dirs(erp_dims)
    t = ray_distances(scene, dirs)
    return ErpImage(data=t.reshape(h, w), require_2to1=(w == 2 * h))


def render_erp_texture(scene: SyntheticScene, erp_dims: tuple[int, int],
                       seed: int = 0,
                       blank_faces: tuple[str, ...] = ()) -> ErpImage:
    """Procedural RGB panorama of the scene for the planning stage.

    Walls carry a smooth sinusoidal texture of the 3-D hit point; faces
    named in ``blank_faces`` (``x+``, ``x-``, ``y+``, ``y-``, ``z+``,
    ``z-``) render as flat gray, giving the planner geometry-poor regions
    to find. Rays that miss an open scene render black.
    """
    h, w = erp_dims
    dirs = erp_pixel_grid_dirs(erp_dims)
    t = ray_distances(scene, dirs)
    hit = np.isfinite(t)
    pts = dirs * np.where(hit, t, 0.0)[:, None]
    rng = np.random.default_rng(seed)
    chans = []
    for _ in range(3):
        freq = rng.uniform(2.0, 5.0, size=3)
        phase = rng.uniform(0.0, 2.0 * math.pi, size=3)
        val = (np.sin(freq[0] * pts[:, 0] + phase[0])
               * np.sin(freq[1] * pts[:, 1] + phase[1])
               + 0.5 * np.sin(freq[2] * (pts[:, 0] + pts[:, 1] + pts[:, 2])
                              + phase[2]))
        chans.append(0.5 + 0.3 * val / 1.5)
    rgb = np.stack(chans, axis=-1)
    if blank_faces and scene.kind == "box":
        face = _box_face_ids(scene, dirs, t)
        names = ("x+", "x-", "y+", "y-", "z+", "z-")
        blank = np.isin(face, [names.index(f) for f in blank_faces])
        rgb[blank] = 0.5
    rgb[~hit] = 0.0
    return ErpImage(data=np.clip(rgb, 0.0, 1.0).reshape(h, w, 3),
                    require_2to1=(w == 2 * h))


def _box_face_ids(scene: SyntheticScene, dirs: np.ndarray,
                  t: np.ndarray) -> np.ndarray:
    """Index of the box face each ray hits (0..5 = x+, x-, y+, y-, z+, z-)."""
    xp, xn, yp, yn, zp, zn = scene.params
    planes = (xp, xn, yp, yn, zp, zn)
    face = np.zeros(dirs.shape[0], dtype=np.int64)
    best = np.full(dirs.shape[0], np.inf)
    for i, plane in enumerate(planes):
        axis = i // 2
        sign = 1.0 if i % 2 == 0 else -1.0
        comp = sign * dirs[:, axis]
        with np.errstate(divide="ignore"):
            t_i = np.where(comp > 0, plane / comp, np.inf)
        closer = t_i < best
        best = np.where(closer, t_i, best)
        face = np.where(closer, i, face)
    return face


# ---------------------------------------------------------------------------
# Reconstructor contract
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReconstructorRequest:
    """Input contract: ordered view rasters, their specs and masks, and
    optional patch-level key confidences for backends honoring the
    log-bias attention."""

    views: ViewSet
    rasters: tuple[np.ndarray, ...]
    masks: tuple[np.ndarray, ...]
    patch_confidence: tuple[np.ndarray, ...] | None = None
    patch_grid: tuple[int, int] = (37, 37)

    def __post_init__(self):
        n = len(self.views)
        if len(self.rasters) != n or len(self.masks) != n:
            raise InvalidInputError("one raster and mask per view required")
        sizes = {spec.size for spec in self.views}
        if len(sizes) != 1:
            raise InvalidInputError("all views must share one resolution")
        if self.patch_confidence is not None and len(self.patch_confidence) != n:
            raise InvalidInputError("one confidence map per view required")

    @property
    def view_size(self) -> int:
        return self.views.specs[0].size


@dataclass(frozen=True)
class ReconstructorResponse:
    """Output contract: per-view point maps and final-layer attention, plus
    optional camera-center estimates (identically zero for the oracle)."""

    observations: tuple[PointMapObservation, ...]
    attention: tuple[AttentionTensor, ...]
    camera_centers: np.ndarray | None = None
    renormalized: bool = False
    metadata: dict = field(default_factory=dict)


def _token_periphery(grid_shape: tuple[int, int]) -> np.ndarray:
    """Normalized border proximity of each token: max(|x|, |y|) in [0, 1)."""
    h, w = grid_shape
    ry = np.abs((np.arange(h) + 0.5) / h * 2.0 - 1.0)
    rx = np.abs((np.arange(w) + 0.5) / w * 2.0 - 1.0)
    return np.maximum(ry[:, None], rx[None, :]).ravel()


def synthetic_attention(mode: str, grid_shape: tuple[int, int],
                        conf: np.ndarray | None = None, *,
                        sigma_base: float = ATTN_SIGMA_BASE,
                        periphery_gain: float = ATTN_PERIPHERY_GAIN,
                        ) -> AttentionTensor:
    """Row-stochastic synthetic attention on the patch grid.

    ``uniform`` and ``distance-decay`` honor an optional key-confidence
    bias; ``one-hot`` is a hard diagonal and ignores it. Distance-decay
    rows are Gaussians in token-grid distance whose bandwidth widens toward
    the view border.
    """
    t = grid_shape[0] * grid_shape[1]
    if mode not in ATTENTION_MODES:
        raise ConfigError(f"unknown attention mode {mode!r}")
    if mode == "one-hot":
        return AttentionTensor(weights=np.eye(t), grid_shape=grid_shape)
    if mode == "uniform":
        logits = np.zeros((t, t))
    else:
        coords = token_coords(grid_shape)
        diff = coords[:, None, :] - coords[None, :, :]
        d2 = np.sum(diff * diff, axis=2)
        rho = _token_periphery(grid_shape)
        sigma = sigma_base * (1.0 + periphery_gain * rho)
        logits = -d2 / (2.0 * sigma * sigma)[:, None]
    if conf is None:
        conf = np.ones(t)
    return biased_softmax_attention(logits, np.asarray(conf).reshape(-1),
                                    grid_shape)


def _pixel_periphery(size: int) -> np.ndarray:
    """max(|x|, |y|) over normalized pixel-center coordinates, (S, S)."""
    c = np.abs((np.arange(size) + 0.5) / size * 2.0 - 1.0)
    return np.maximum(c[:, None], c[None, :])


def oracle_reconstruct(req: ReconstructorRequest, scene: SyntheticScene, *,
                       noise_sigma: float = 0.0,
                       attention_mode: str = "distance-decay",
                       seed: int = 0,
                       noise_periphery_gain: float = NOISE_PERIPHERY_GAIN,
                       ) -> ReconstructorResponse:
    """Analytic reconstruction: cast every view ray into the scene.

    Point maps are exact for ``noise_sigma == 0``; otherwise the hit
    distance is perturbed multiplicatively with seeded Gaussian noise whose
    std grows toward the view periphery. View rasters are ignored (the
    oracle is geometric); attention comes from ``attention_mode`` with the
    request's patch confidence applied as a key bias where the mode allows.
    """
    size = req.view_size
    grid = req.patch_grid
    ss = np.random.SeedSequence(seed)
    child_seeds = ss.spawn(len(req.views))
    rho = _pixel_periphery(size)
    observations = []
    tensors = []
    for i, spec in enumerate(req.views):
        dirs = view_pixel_grid_dirs(spec)
        t = ray_distances(scene, dirs)
        hit = np.isfinite(t)
        if scene.closed and not hit.all():
            raise AssertionError("closed scene missed by a ray (internal bug)")
        if noise_sigma > 0.0:
            rng = np.random.default_rng(child_seeds[i])
            eps = rng.standard_normal(size * size)
            scale = noise_sigma * (1.0 + noise_periphery_gain * rho.ravel() ** 2)
            t = t * np.maximum(1.0 + eps * scale, 0.05)
        pts = (dirs * np.where(hit, t, np.nan)[:, None]).reshape(size, size, 3)
        observations.append(PointMapObservation(
            view_index=i, points=pts, valid=hit.reshape(size, size)))
        conf = None
        if req.patch_confidence is not None:
            conf = req.patch_confidence[i]
        tensors.append(synthetic_attention(attention_mode, grid, conf))
    meta = {
        "scene": {"kind": scene.kind, "params": list(scene.params)},
        "noise_sigma": noise_sigma,
        "noise_periphery_gain": noise_periphery_gain,
        "attention_mode": attention_mode,
        "seed": seed,
        "head_reduction": "mean",
        "bias_layers": "all" if req.patch_confidence is not None else "none",
    }
    return ReconstructorResponse(
        observations=tuple(observations), attention=tuple(tensors),
        camera_centers=np.zeros((len(req.views), 3)), metadata=meta)


# ---------------------------------------------------------------------------
# Bundle export / import
# ---------------------------------------------------------------------------


def _points_name(i: int) -> str:
    return f"view_{i:03d}.points.f32r"


def _attn_name(i: int) -> str:
    return f"view_{i:03d}.attn.f32r"


def _depth_name(i: int) -> str:
    return f"view_{i:03d}.depth.f32r"


def export_bundle(response: ReconstructorResponse, views: ViewSet,
                  out_dir: str | Path, *, recenter: bool = False,
                  write_depth: bool = False) -> Path:
    """Write a reconstruction bundle (manifest + F32R rasters).

    Point maps and attention tensors are stored as 32-bit floats; the
    manifest embeds the view specs so the bundle is self-contained.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(response.observations)
    if n != len(views):
        raise InvalidInputError("bundle export needs one observation per view")
    grid = response.attention[0].grid_shape
    size = response.observations[0].size
    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "view_count": n,
        "view_size": size,
        "patch_grid": [grid[0], grid[1]],
        "frame": "panorama-center; x right, y up, z forward",
        "head_reduction": response.metadata.get("head_reduction", "mean"),
        "recenter": recenter,
        "views": [
            {"index": i, "yaw": s.yaw, "pitch": s.pitch, "fov": s.fov,
             "resolution": s.size, "parent": views.parents[i]}
            for i, s in enumerate(views.specs)
        ],
        "metadata": response.metadata,
    }
    if response.camera_centers is not None:
        manifest["camera_centers"] = np.asarray(
            response.camera_centers, dtype=float).tolist()
    for i, obs in enumerate(response.observations):
        fileio.write_f32r(out / _points_name(i), obs.points)
        fileio.write_f32r(out / _attn_name(i), response.attention[i].weights)
        if write_depth:
            fileio.write_f32r(out / _depth_name(i), obs.distance())
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def import_reconstruction(bundle_dir: str | Path) -> tuple[ReconstructorResponse, ViewSet]:
    """Load and validate a bundle; returns the response and its view set.

    Attention rows off unit sum are re-normalized (``renormalized`` flag
    set; deviations beyond 1e-3 additionally log a warning). Point maps
    are re-centered by the camera-center centroid when the manifest asks
    for it. Missing files and shape mismatches raise ``BundleError``.
    """
    import logging
    log = logging.getLogger(__name__)

    bundle = Path(bundle_dir)
    man_path = bundle / "manifest.json"
    if not man_path.is_file():
        raise BundleError(f"missing manifest: {man_path}")
    try:
        manifest = json.loads(man_path.read_text())
    except json.JSONDecodeError as e:
        raise BundleError(f"unreadable manifest {man_path}: {e}") from e
    if manifest.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise BundleError("unsupported bundle format_version "
                          f"{manifest.get('format_version')!r}")
    n = int(manifest["view_count"])
    size = int(manifest["view_size"])
    grid = tuple(int(x) for x in manifest["patch_grid"])
    t = grid[0] * grid[1]
    specs = []
    parents = []
    for entry in sorted(manifest["views"], key=lambda e: e["index"]):
        specs.append(ViewSpec(yaw=entry["yaw"], pitch=entry["pitch"],
                              fov=entry["fov"], size=entry["resolution"]))
        parents.append(entry.get("parent"))
    if len(specs) != n:
        raise BundleError(f"manifest lists {len(specs)} views, expected {n}")
    views = ViewSet(specs=tuple(specs), parents=tuple(parents))

    centers = None
    if "camera_centers" in manifest:
        centers = np.asarray(manifest["camera_centers"], dtype=np.float64)
        if centers.shape != (n, 3):
            raise BundleError("camera_centers must be (view_count, 3)")
    offset = np.zeros(3)
    if manifest.get("recenter"):
        if centers is None:
            raise BundleError("recenter requested but no camera_centers given")
        offset = centers.mean(axis=0)

    observations = []
    tensors = []
    renormalized = False
    for i in range(n):
        ppath = bundle / _points_name(i)
        apath = bundle / _attn_name(i)
        for p in (ppath, apath):
            if not p.is_file():
                raise BundleError(f"missing bundle file: {p}")
        pts = fileio.read_f32r(ppath).astype(np.float64)
        if pts.shape != (size, size, 3):
            raise BundleError(f"{ppath}: expected ({size}, {size}, 3), "
                              f"got {pts.shape}")
        pts = pts - offset
        valid = np.all(np.isfinite(pts), axis=2)
        pts = np.where(valid[:, :, None], pts, np.nan)
        observations.append(PointMapObservation(view_index=i, points=pts,
                                                valid=valid))
        attn = fileio.read_f32r(apath).astype(np.float64)
        attn = attn.reshape(attn.shape[0], -1)
        if attn.shape != (t, t):
            raise BundleError(f"{apath}: expected ({t}, {t}), got {attn.shape}")
        sums = attn.sum(axis=1)
        if np.any(sums <= 0.0):
            raise BundleError(f"{apath}: attention row with non-positive sum")
        dev = float(np.max(np.abs(sums - 1.0)))
        if dev > 1e-6:
            if dev > 1e-3:
                log.warning("%s: attention rows off unit sum by %.3g; "
                            "re-normalizing", apath, dev)
            attn = attn / sums[:, None]
            renormalized = True
        tensors.append(AttentionTensor(weights=attn, grid_shape=grid))
    response = ReconstructorResponse(
        observations=tuple(observations), attention=tuple(tensors),
        camera_centers=centers, renormalized=renormalized,
        metadata=manifest.get("metadata", {}))
    return response, views

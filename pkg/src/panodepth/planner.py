"""Uncertainty-guided view planning.

Scores each base view by a gradient-derived uncertainty (flat, texture-poor
views score high), selects the top-K most uncertain, and augments each with
two neighboring views offset toward the upper-right and lower-left.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, InvalidInputError
from .geometry import ErpImage, ViewSet, ViewSpec, extract_view
from .kernels import sobel_magnitude

VIEWSET_SCHEMA_VERSION = 1

TAU_FLOOR = 1e-6
MAD_SCALE = 1.4826  # consistency constant: 1/Phi^-1(3/4)

GRAY_WEIGHTS = (0.299, 0.587, 0.114)  # Rec.601

# Pitch of generated neighbor views is clamped inside the open pole interval.
PITCH_LIMIT = math.pi / 2 - 1e-3


@dataclass(frozen=True)
class UncertaintyMap:
    """Per-pixel uncertainty U = sigmoid(-Z) with its intermediate Z raster."""

    u: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class ViewScore:
    view_index: int
    score: float


@dataclass(frozen=True)
class PlannerConfig:
    """View-planning parameters.

    The default rig uses 8 base views (6 equatorial + zenith + nadir) at
    120 deg FOV and augments the top-2 most uncertain views.
    """

    n_base: int = 8
    top_k: int = 2
    fov: float = math.radians(120.0)
    view_size: int = 518
    neighbor_offsets: tuple[tuple[float, float], ...] | None = None
    tau_mode: str = "robust"  # "robust" (MAD-based) or "fixed"
    tau_const: float = 1.0

    def __post_init__(self):
        if self.n_base < 6:
            raise ConfigError(f"n_base must be >= 6, got {self.n_base}")
        if not (0 <= self.top_k <= self.n_base):
            raise ConfigError("top_k must be in [0, n_base]")
        if not (0.0 < self.fov < math.pi):
            raise ConfigError("fov must be in (0, pi)")
        if self.tau_mode not in ("robust", "fixed"):
            raise ConfigError(f"unknown tau mode {self.tau_mode!r}")
        if self.tau_mode == "fixed" and self.tau_const <= 0:
            raise ConfigError("fixed tau must be positive")
        if self.neighbor_offsets is None:
            d = self.fov / 4.0
            object.__setattr__(self, "neighbor_offsets", ((d, d), (-d, -d)))
        offs = tuple((float(dy), float(dp)) for dy, dp in self.neighbor_offsets)
        if len(offs) != 2:
            raise ConfigError("exactly two neighbor offsets required")
        for _, dp in offs:
            if abs(dp) >= math.pi / 2:
                raise ConfigError("neighbor pitch offset must keep |pitch| < pi/2")
        object.__setattr__(self, "neighbor_offsets", offs)


def to_grayscale(raster: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an (H, W, 3) raster; identity for single channel."""
    arr = np.asarray(raster, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    r, g, b = GRAY_WEIGHTS
    return r * arr[:, :, 0] + g * arr[:, :, 1] + b * arr[:, :, 2]


def base_rig(cfg: PlannerConfig) -> ViewSet:
    """Deterministic base layout: n_base - 2 equatorial views evenly spaced
    in yaw, then zenith (pitch +90 deg) and nadir (pitch -90 deg)."""
    n_eq = cfg.n_base - 2
    specs = [ViewSpec(yaw=2.0 * math.pi * i / n_eq, pitch=0.0,
                      fov=cfg.fov, size=cfg.view_size) for i in range(n_eq)]
    specs.append(ViewSpec(yaw=0.0, pitch=math.pi / 2, fov=cfg.fov,
                          size=cfg.view_size))
    specs.append(ViewSpec(yaw=0.0, pitch=-math.pi / 2, fov=cfg.fov,
                          size=cfg.view_size))
    return ViewSet(specs=tuple(specs))


def normalized_gradient_z(view: np.ndarray, mask: np.ndarray, *,
                          tau_mode: str = "robust",
                          tau_const: float = 1.0) -> np.ndarray:
    """Median-centered, tau-scaled Sobel gradient magnitude.

    Z(p) = (G(p) - median(G over valid)) / tau with
    tau = max(1.4826 * MAD, 1e-6) in robust mode or a fixed constant.
    """
    gray = to_grayscale(view)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != gray.shape:
        raise InvalidInputError("mask shape must match view shape")
    if not mask.any():
        raise DegenerateInputError("mask has no valid pixels")
    g = sobel_magnitude(gray)
    vals = g[mask]
    med = float(np.median(vals))
    if tau_mode == "robust":
        mad = float(np.median(np.abs(vals - med)))
        tau = max(MAD_SCALE * mad, TAU_FLOOR)
    elif tau_mode == "fixed":
        if tau_const <= 0:
            raise ConfigError("fixed tau must be positive")
        tau = tau_const
    else:
        raise ConfigError(f"unknown tau mode {tau_mode!r}")
    return (g - med) / tau


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def uncertainty_map(view: np.ndarray, mask: np.ndarray, *,
                    tau_mode: str = "robust",
                    tau_const: float = 1.0) -> UncertaintyMap:
    """Per-pixel geometric uncertainty U = sigmoid(-Z); high where flat."""
    z = normalized_gradient_z(view, mask, tau_mode=tau_mode, tau_const=tau_const)
    return UncertaintyMap(u=sigmoid(-z), z=z)


def score_view(umap: UncertaintyMap, mask: np.ndarray,
               view_index: int = 0) -> ViewScore:
    """Valid-area-weighted mean uncertainty of one view."""
    mask = np.asarray(mask, dtype=bool)
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise DegenerateInputError("cannot score a view with no valid pixels")
    return ViewScore(view_index=view_index,
                     score=float(umap.u[mask].sum() / n_valid))


def _clamp_pitch(p: float) -> float:
    return min(max(p, -PITCH_LIMIT), PITCH_LIMIT)


def neighbor_specs(parent: ViewSpec, cfg: PlannerConfig) -> list[ViewSpec]:
    """Two neighbor views around a parent (upper-right, lower-left)."""
    out = []
    for dyaw, dpitch in cfg.neighbor_offsets:
        out.append(ViewSpec(yaw=parent.yaw + dyaw,
                            pitch=_clamp_pitch(parent.pitch + dpitch),
                            fov=parent.fov, size=parent.size))
    return out


def score_base_views(erp: ErpImage, cfg: PlannerConfig) -> list[ViewScore]:
    """Extract and score every base-rig view."""
    rig = base_rig(cfg)
    scores = []
    for i, spec in enumerate(rig):
        view, mask = extract_view(erp, spec)
        umap = uncertainty_map(view, mask, tau_mode=cfg.tau_mode,
                               tau_const=cfg.tau_const)
        scores.append(score_view(umap, mask, view_index=i))
    return scores


def select_top_k(scores: list[ViewScore], k: int) -> list[int]:
    """Indices of the k highest-scoring views; ties break on lower index."""
    order = sorted(scores, key=lambda s: (-s.score, s.view_index))
    return [s.view_index for s in order[:k]]


def plan_views(erp: ErpImage, cfg: PlannerConfig) -> ViewSet:
    """Full planning pass: base rig plus 2 neighbors per top-K view.

    Output order is base views in rig order, then neighbor pairs grouped by
    parent in selection (score-descending) order; |output| = n_base + 2K.
    """
    rig = base_rig(cfg)
    specs = list(rig.specs)
    parents: list[int | None] = [None] * len(specs)
    if cfg.top_k > 0:
        scores = score_base_views(erp, cfg)
        for parent_idx in select_top_k(scores, cfg.top_k):
            for spec in neighbor_specs(rig.specs[parent_idx], cfg):
                specs.append(spec)
                parents.append(parent_idx)
    return ViewSet(specs=tuple(specs), parents=tuple(parents))


# ---------------------------------------------------------------------------
# ViewSet JSON serialization (the `plan` CLI artifact)
# ---------------------------------------------------------------------------


def viewset_to_json(views: ViewSet) -> str:
    doc = {
        "schema_version": VIEWSET_SCHEMA_VERSION,
        "angles": "radians",
        "views": [
            {
                "index": i,
                "yaw": spec.yaw,
                "pitch": spec.pitch,
                "fov": spec.fov,
                "resolution": spec.size,
                "parent": views.parents[i],
            }
            for i, spec in enumerate(views.specs)
        ],
    }
    return json.dumps(doc, indent=2)


def viewset_from_json(text: str) -> ViewSet:
    doc = json.loads(text)
    if doc.get("schema_version") != VIEWSET_SCHEMA_VERSION:
        raise ConfigError("unsupported view-set schema version "
                          f"{doc.get('schema_version')!r}")
    entries = sorted(doc["views"], key=lambda e: e["index"])
    specs = tuple(ViewSpec(yaw=e["yaw"], pitch=e["pitch"], fov=e["fov"],
                           size=e["resolution"]) for e in entries)
    parents = tuple(e.get("parent") for e in entries)
    return ViewSet(specs=specs, parents=parents)

"""Attention-derived reliability weights and multi-view depth fusion.

Three per-token scores are read off a view's attention map — entropy
sharpness, Gaussian-kernel locality, and transpose-consistency symmetry —
then min-max normalized, summed, re-normalized, floored, and bilinearly
upsampled to pixel resolution as the fusion weight. Fusion itself is a
gather: every panorama ray samples distance and weight from each view that
sees it and takes the weighted average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .confidence import AttentionTensor
from .errors import DegenerateInputError, InvalidInputError
from .geometry import ViewSet, ViewSpec, erp_pixel_grid_dirs, rotation_cam_to_world
from .kernels import bilinear_sample, fuse_gather

WEIGHT_FLOOR = 1e-6
CONST_RTOL = 1e-12  # metric vectors flatter than this count as constant


@dataclass(frozen=True)
class CorrelationWeights:
    """Per-token reliability scores and the combined, upsampled weight."""

    sharp: np.ndarray
    loc: np.ndarray
    sym: np.ndarray
    combined: np.ndarray      # (T,), in [WEIGHT_FLOOR, 1]
    pixel: np.ndarray         # (S, S) bilinear upsample of combined
    grid_shape: tuple[int, int]


@dataclass(frozen=True)
class PointMapObservation:
    """Dense per-pixel 3-D points of one view in the shared panorama-center
    frame; invalid pixels carry NaN points."""

    view_index: int
    points: np.ndarray        # (S, S, 3)
    valid: np.ndarray         # (S, S) bool

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3 or pts.shape[0] != pts.shape[1]:
            raise InvalidInputError("point map must be (S, S, 3)")
        valid = np.asarray(self.valid, dtype=bool)
        if valid.shape != pts.shape[:2]:
            raise InvalidInputError("validity mask must match point map")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "valid", valid)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def distance(self) -> np.ndarray:
        """Ray length ||P|| from the panorama center; NaN where invalid."""
        d = np.sqrt(np.sum(self.points * self.points, axis=2))
        d = np.where(self.valid, d, np.nan)
        return d


@dataclass(frozen=True)
class FusedErpDepth:
    """Fused equirectangular depth with bookkeeping rasters."""

    depth: np.ndarray         # (H, W), NaN where no view contributed
    weight_sum: np.ndarray    # (H, W)
    count: np.ndarray         # (H, W) int32 contributing views

    @property
    def valid(self) -> np.ndarray:
        return self.count > 0


# ---------------------------------------------------------------------------
# Per-token attention reliability metrics
# ---------------------------------------------------------------------------


def token_coords(grid_shape: tuple[int, int]) -> np.ndarray:
    """(T, 2) patch-grid (row, col) positions of tokens, row-major."""
    h, w = grid_shape
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def default_locality_sigma(grid_shape: tuple[int, int]) -> float:
    """Default Gaussian bandwidth: 0.15 x patch-grid diagonal."""
    h, w = grid_shape
    return 0.15 * math.hypot(h - 1, w - 1)


def sharpness(attn: AttentionTensor, k: int | None = None) -> np.ndarray | float:
    """Entropy concentration 1 - H(row)/log(T); 0 for uniform rows, 1 for
    one-hot rows. Natural log; 0*log(0) treated as 0."""
    w = attn.weights
    t = w.shape[1]
    if t < 2:
        raise DegenerateInputError("sharpness needs at least 2 tokens")
    rows = w if k is None else w[k:k + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        lw = np.where(rows > 0.0, np.log(np.where(rows > 0.0, rows, 1.0)), 0.0)
    h = -(rows * lw).sum(axis=1)
    s = 1.0 - h / math.log(t)
    s = np.clip(s, 0.0, 1.0)
    return float(s[0]) if k is not None else s


def locality(attn: AttentionTensor, sigma: float | None = None,
             k: int | None = None) -> np.ndarray | float:
    """Gaussian-weighted spatial compactness of each attention row.

    S_loc = sum_p attn(k, p) * exp(-||x_p - x_k||^2 / (2 sigma^2));
    the kernel is 1 at zero distance, so pure self-attention scores 1.
    """
    if sigma is None:
        sigma = default_locality_sigma(attn.grid_shape)
    if sigma <= 0:
        raise InvalidInputError("locality sigma must be positive")
    coords = token_coords(attn.grid_shape)
    diff = coords[:, None, :] - coords[None, :, :]
    d2 = np.sum(diff * diff, axis=2)
    kern = np.exp(-d2 / (2.0 * sigma * sigma))
    rows = attn.weights if k is None else attn.weights[k:k + 1]
    kern_rows = kern if k is None else kern[k:k + 1]
    s = (rows * kern_rows).sum(axis=1)
    return float(s[0]) if k is not None else s


def renormalized_transpose(attn: AttentionTensor) -> np.ndarray:
    """Transpose of the attention map with each row re-normalized to sum 1;
    rows whose transpose sums to 0 fall back to the uniform distribution."""
    w = attn.weights
    t = w.shape[0]
    wt = w.T.copy()
    sums = wt.sum(axis=1, keepdims=True)
    zero = sums[:, 0] <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(zero[:, None], 1.0 / t, wt / sums)
    return out


def symmetry(attn: AttentionTensor, k: int | None = None) -> np.ndarray | float:
    """Bhattacharyya coefficient between each row and the corresponding row
    of the re-normalized transpose; 1 for mutually consistent attention."""
    w = attn.weights
    wt = renormalized_transpose(attn)
    rows = w if k is None else w[k:k + 1]
    trows = wt if k is None else wt[k:k + 1]
    s = np.sqrt(rows * trows).sum(axis=1)
    s = np.clip(s, 0.0, 1.0)
    return float(s[0]) if k is not None else s


# ---------------------------------------------------------------------------
# Weight combination (normalize, sum, normalize, floor, upsample)
# ---------------------------------------------------------------------------


def minmax_normalize(values: np.ndarray,
                     value_range: tuple[float, float] | None = None) -> np.ndarray:
    """Min-max map to [0, 1]; (near-)constant input maps to all 0.5.

    ``value_range`` overrides the observed (min, max), used for the global
    normalization mode where the range spans all views.
    """
    v = np.asarray(values, dtype=np.float64)
    lo, hi = (float(v.min()), float(v.max())) if value_range is None \
        else (float(value_range[0]), float(value_range[1]))
    span = hi - lo
    if span <= CONST_RTOL * max(1.0, abs(hi), abs(lo)):
        return np.full(v.shape, 0.5)
    return np.clip((v - lo) / span, 0.0, 1.0)


def upsample_token_raster(values: np.ndarray, grid_shape: tuple[int, int],
                          size: int) -> np.ndarray:
    """Bilinearly upsample a per-token raster to (size, size) pixels.

    Patch centers map to pixel-center coordinates; the border half-patch is
    edge-clamped.
    """
    h, w = grid_shape
    grid = np.asarray(values, dtype=np.float64).reshape(h, w)
    pix = np.arange(size, dtype=np.float64) + 0.5
    gu = pix * (w / size) - 0.5
    gv = pix * (h / size) - 0.5
    uu, vv = np.meshgrid(gu, gv)
    return bilinear_sample(grid, uu.ravel(), vv.ravel(),
                           wrap_u=False).reshape(size, size)


def combine_weights(sharp: np.ndarray, loc: np.ndarray, sym: np.ndarray,
                    grid_shape: tuple[int, int], size: int, *,
                    ranges: dict[str, tuple[float, float]] | None = None,
                    ) -> CorrelationWeights:
    """Combine the three reliability metrics into fusion weights.

    Each metric is min-max normalized over the view's tokens, the three are
    summed, the sum is min-max normalized again, floored at WEIGHT_FLOOR,
    and bilinearly upsampled to pixel resolution. ``ranges`` supplies
    cross-view (min, max) per metric (keys ``sharp``/``loc``/``sym``/``sum``)
    for the global normalization mode.
    """
    sharp = np.asarray(sharp, dtype=np.float64).reshape(-1)
    loc = np.asarray(loc, dtype=np.float64).reshape(-1)
    sym = np.asarray(sym, dtype=np.float64).reshape(-1)
    t = grid_shape[0] * grid_shape[1]
    if not (sharp.shape[0] == loc.shape[0] == sym.shape[0] == t):
        raise InvalidInputError("metric vectors must have one entry per token")
    rng = ranges or {}
    total = (minmax_normalize(sharp, rng.get("sharp"))
             + minmax_normalize(loc, rng.get("loc"))
             + minmax_normalize(sym, rng.get("sym")))
    combined = np.maximum(minmax_normalize(total, rng.get("sum")), WEIGHT_FLOOR)
    pixel = upsample_token_raster(combined, grid_shape, size)
    return CorrelationWeights(sharp=sharp, loc=loc, sym=sym,
                              combined=combined, pixel=pixel,
                              grid_shape=grid_shape)


def weights_from_attention(attn: AttentionTensor, size: int, *,
                           sigma: float | None = None,
                           use_sharp: bool = True,
                           use_loc: bool = True,
                           use_sym: bool = True,
                           ranges: dict[str, tuple[float, float]] | None = None,
                           ) -> CorrelationWeights:
    """Full metric pipeline for one view's attention map.

    Disabled metrics enter as constant vectors (and therefore normalize to
    a flat 0.5, contributing nothing to the token ordering).
    """
    t = attn.tokens
    sharp = sharpness(attn) if use_sharp else np.zeros(t)
    loc = locality(attn, sigma=sigma) if use_loc else np.zeros(t)
    sym = symmetry(attn) if use_sym else np.zeros(t)
    return combine_weights(sharp, loc, sym, attn.grid_shape, size, ranges=ranges)


# ---------------------------------------------------------------------------
# Gather fusion into the ERP raster
# ---------------------------------------------------------------------------


def _fusion_stacks(observations: list[PointMapObservation],
                   weights: list[np.ndarray],
                   views: ViewSet | list[ViewSpec]):
    specs = list(views)
    if not observations:
        raise InvalidInputError("fuse_to_erp needs at least one observation")
    if len(weights) != len(observations):
        raise InvalidInputError("one weight raster per observation required")
    order = np.argsort([obs.view_index for obs in observations], kind="stable")
    size = observations[0].size
    rot = np.empty((len(order), 3, 3))
    tan_half = np.empty(len(order))
    depth = np.empty((len(order), size, size))
    weight = np.empty((len(order), size, size))
    valid = np.empty((len(order), size, size), dtype=np.uint8)
    for slot, idx in enumerate(order):
        obs = observations[idx]
        w = np.asarray(weights[idx], dtype=np.float64)
        if obs.size != size or w.shape != (size, size):
            raise InvalidInputError("observation/weight raster shape mismatch")
        if not (0 <= obs.view_index < len(specs)):
            raise InvalidInputError(f"view index {obs.view_index} out of range")
        spec = specs[obs.view_index]
        if spec.size != size:
            raise InvalidInputError("view spec resolution mismatch")
        rot[slot] = rotation_cam_to_world(spec).T
        tan_half[slot] = spec.tan_half_fov
        depth[slot] = obs.distance()
        weight[slot] = w
        valid[slot] = obs.valid.astype(np.uint8)
    return rot, tan_half, depth, weight, valid


def fuse_to_erp(observations: list[PointMapObservation],
                weights: list[np.ndarray],
                views: ViewSet | list[ViewSpec],
                erp_dims: tuple[int, int]) -> FusedErpDepth:
    """Correlation-weighted gather fusion of multi-view depth into ERP.

    For every ERP pixel, each view whose frustum contains the ray
    contributes a bilinear sample of its distance and weight rasters
    (samples touching invalid pixels are skipped); the output is
    sum(C * D) / sum(C), NaN where nothing contributed. Summation follows
    view-index order, so the result is independent of input ordering.
    Weights must be positive.
    """
    rot, tan_half, depth, weight, valid = _fusion_stacks(
        observations, weights, views)
    h, w = erp_dims
    dirs = erp_pixel_grid_dirs(erp_dims)
    fused, wsum, count = fuse_gather(dirs, rot, tan_half, depth, weight, valid)
    return FusedErpDepth(depth=fused.reshape(h, w),
                         weight_sum=wsum.reshape(h, w),
                         count=count.reshape(h, w))


def gather_view_samples(observations: list[PointMapObservation],
                        weights: list[np.ndarray],
                        views: ViewSet | list[ViewSpec],
                        erp_dims: tuple[int, int]):
    """Per-view sampled (depth, weight, ok) stacks for every ERP pixel.

    Debug/verification companion to :func:`fuse_to_erp`: returns arrays of
    shape (K, H, W) in view-index order so tests can check the fused value
    against its own contributors (convexity bounds etc.).
    """
    rot, tan_half, depth, weight, valid = _fusion_stacks(
        observations, weights, views)
    h, w = erp_dims
    dirs = erp_pixel_grid_dirs(erp_dims)
    k = rot.shape[0]
    d_out = np.full((k, h * w), np.nan)
    w_out = np.full((k, h * w), np.nan)
    ok_out = np.zeros((k, h * w), dtype=bool)
    for i in range(k):
        fused, wsum, count = fuse_gather(dirs, rot[i:i + 1], tan_half[i:i + 1],
                                         depth[i:i + 1], weight[i:i + 1],
                                         valid[i:i + 1])
        ok = count > 0
        d_out[i][ok] = fused[ok]
        w_out[i][ok] = wsum[ok]
        ok_out[i] = ok
    return (d_out.reshape(k, h, w), w_out.reshape(k, h, w),
            ok_out.reshape(k, h, w))

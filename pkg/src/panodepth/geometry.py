"""Spherical coordinate conventions and equirectangular/perspective geometry.

Conventions used everywhere in this package:

  * Directions are unit 3-vectors ``(x right, y up, z forward)``;
    ``dir(lon, lat) = (cos(lat)*sin(lon), sin(lat), cos(lat)*cos(lon))``.
  * An equirectangular (ERP) raster of width W and height H maps pixel
    ``(u, v)`` (continuous, pixel centers at integers) to
    ``lon = ((u + 0.5) / W) * 2*pi - pi`` and
    ``lat = pi/2 - ((v + 0.5) / H) * pi``, so ``lon`` spans (-pi, pi] and
    ``lat`` spans (-pi/2, pi/2) across the raster interior.
  * Perspective views are square pinhole cameras with equal horizontal and
    vertical FOV, zero roll, rotated by pitch about x (positive = up) and
    then yaw about y (positive = toward +x). The optical axis of a view at
    (yaw, pitch) is ``dir(yaw, pitch)``.
  * Bilinear resampling wraps longitude modulo W and clamps latitude at
    the poles; at the exact pole a direction's column is tie-broken to the
    image center column ``W/2 - 0.5``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError
from .kernels import bilinear_sample

POLE_EPS = 1e-12


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErpImage:
    """Equirectangular raster: RGB in [0, 1] or a scalar field (meters).

    ``data`` is (H, W) for a single channel or (H, W, 3) for RGB. The 2:1
    aspect W = 2H is enforced unless ``require_2to1`` is False.
    """

    data: np.ndarray
    require_2to1: bool = True

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ConfigError("ErpImage data must be (H, W) or (H, W, 3)")
        h, w = arr.shape[:2]
        if h < 2 or w < 4:
            raise ConfigError(f"ERP raster too small: {w}x{h}")
        if self.require_2to1 and w != 2 * h:
            raise ConfigError(f"ERP raster must be 2:1 (got {w}x{h}); "
                              "pass require_2to1=False to relax")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def dims(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class ViewSpec:
    """Square perspective camera: yaw/pitch in radians, fov, side length."""

    yaw: float
    pitch: float
    fov: float
    size: int

    def __post_init__(self):
        if not (0.0 < self.fov < math.pi):
            raise ConfigError(f"fov must be in (0, pi), got {self.fov}")
        if self.size < 8:
            raise ConfigError(f"view resolution must be >= 8, got {self.size}")
        if abs(self.pitch) > math.pi / 2 + 1e-12:
            raise ConfigError(f"|pitch| must be <= pi/2, got {self.pitch}")

    @property
    def tan_half_fov(self) -> float:
        return math.tan(self.fov / 2.0)


@dataclass(frozen=True)
class ViewSet:
    """Ordered collection of views; ``parents[i]`` is the base-view index a
    neighbor view was spawned from, or None for base views."""

    specs: tuple[ViewSpec, ...]
    parents: tuple[int | None, ...] = field(default=())

    def __post_init__(self):
        specs = tuple(self.specs)
        parents = tuple(self.parents) if self.parents else (None,) * len(specs)
        if len(parents) != len(specs):
            raise ConfigError("parents must match specs length")
        object.__setattr__(self, "specs", specs)
        object.__setattr__(self, "parents", parents)

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)


# ---------------------------------------------------------------------------
# Direction <-> lon/lat <-> ERP pixel
# ---------------------------------------------------------------------------


def dir_from_lonlat(lon, lat):
    """Unit direction(s) for longitude/latitude arrays (radians)."""
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    cl = np.cos(lat)
    return np.stack([cl * np.sin(lon), np.sin(lat), cl * np.cos(lon)], axis=-1)


def lonlat_from_dir(d):
    """Longitude/latitude (radians) of direction(s); no normalization."""
    d = np.asarray(d, dtype=np.float64)
    lon = np.arctan2(d[..., 0], d[..., 2])
    lat = np.arcsin(np.clip(d[..., 1], -1.0, 1.0))
    return lon, lat


def erp_pixel_to_dir(erp_dims: tuple[int, int], u, v) -> np.ndarray:
    """Unit direction for continuous ERP pixel coordinates.

    Accepts the continuous coordinate range u in [-0.5, W-0.5] and
    v in [-0.5, H-0.5] (integer pixel indices lie inside); anything
    outside raises. Scalar or array inputs.
    """
    h, w = erp_dims
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u < -0.5) or np.any(u > w - 0.5) \
            or np.any(v < -0.5) or np.any(v > h - 0.5):
        raise InvalidInputError(
            f"pixel out of range for {w}x{h} ERP raster")
    lon = ((u + 0.5) / w) * (2.0 * math.pi) - math.pi
    lat = math.pi / 2.0 - ((v + 0.5) / h) * math.pi
    d = dir_from_lonlat(lon, lat)
    return d if d.ndim > 1 else d.reshape(3)


def _erp_coords_from_dirs(erp_dims: tuple[int, int], dirs: np.ndarray):
    """Continuous ERP pixel coordinates for an (N, 3) direction array.

    Internal fast path: no norm validation, no pole tie-break.
    """
    h, w = erp_dims
    lon, lat = lonlat_from_dir(dirs)
    u = (lon + math.pi) / (2.0 * math.pi) * w - 0.5
    v = (math.pi / 2.0 - lat) / math.pi * h - 0.5
    return u, v


def dir_to_erp_pixel(erp_dims: tuple[int, int], d) -> tuple:
    """Continuous ERP pixel coordinates of unit direction(s).

    Inverse of :func:`erp_pixel_to_dir` up to longitude wrap. At the poles
    (|y| = 1) the column is tie-broken to the image center ``W/2 - 0.5``.
    """
    h, w = erp_dims
    d = np.asarray(d, dtype=np.float64)
    scalar = d.ndim == 1
    d2 = d.reshape(-1, 3)
    n = np.sqrt(np.sum(d2 * d2, axis=1))
    if np.any(n < 1e-12):
        raise InvalidInputError("zero direction vector")
    if np.any(np.abs(n - 1.0) > 1e-6):
        raise InvalidInputError("direction must be unit length within 1e-6")
    u, v = _erp_coords_from_dirs(erp_dims, d2)
    at_pole = np.abs(d2[:, 1]) >= 1.0 - POLE_EPS
    u = np.where(at_pole, w / 2.0 - 0.5, u)
    if scalar:
        return float(u[0]), float(v[0])
    return u, v


# ---------------------------------------------------------------------------
# Perspective views
# ---------------------------------------------------------------------------


def rotation_cam_to_world(spec: ViewSpec) -> np.ndarray:
    """3x3 rotation taking camera-frame vectors to the shared frame.

    ``R = R_yaw @ R_pitch``; the camera forward (0, 0, 1) maps to
    ``dir(yaw, pitch)``.
    """
    cy, sy = math.cos(spec.yaw), math.sin(spec.yaw)
    cp, sp = math.cos(spec.pitch), math.sin(spec.pitch)
    r_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
    return r_yaw @ r_pitch


def view_plane_coords(size: int, u, v) -> tuple:
    """Normalized image-plane coordinates in [-1, 1] at unit focal scale."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = (u + 0.5) / size * 2.0 - 1.0
    y = 1.0 - (v + 0.5) / size * 2.0
    return x, y


def view_pixel_to_dir(spec: ViewSpec, u, v) -> np.ndarray:
    """Unit world direction of the ray through continuous view pixel (u, v)."""
    x, y = view_plane_coords(spec.size, u, v)
    t = spec.tan_half_fov
    px = x * t
    py = y * t
    pz = np.ones_like(px)
    d = np.stack([px, py, pz], axis=-1)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    rot = rotation_cam_to_world(spec)
    out = d @ rot.T
    return out if out.ndim > 1 else out.reshape(3)


def project_dirs_to_view(spec: ViewSpec, dirs: np.ndarray):
    """Project world directions into a view.

    Returns ``(u, v, inside)``: continuous view pixel coordinates and a
    boolean mask of rays inside the frustum (in front of the camera and
    within the square FOV, boundary inclusive).
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    d2 = dirs.reshape(-1, 3)
    rot = rotation_cam_to_world(spec)
    cam = d2 @ rot  # equals (rot.T @ d) per ray
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    th = spec.tan_half_fov
    with np.errstate(divide="ignore", invalid="ignore"):
        px = x / z
        py = y / z
    inside = (z > 0.0) & (np.abs(px) <= th) & (np.abs(py) <= th)
    s = spec.size
    u = (px / th + 1.0) * 0.5 * s - 0.5
    v = (1.0 - py / th) * 0.5 * s - 0.5
    if dirs.ndim == 1:
        return float(u[0]), float(v[0]), bool(inside[0])
    return u, v, inside


def view_pixel_grid_dirs(spec: ViewSpec) -> np.ndarray:
    """(S*S, 3) unit directions of all pixel centers, row-major."""
    s = spec.size
    idx = np.arange(s, dtype=np.float64)
    uu, vv = np.meshgrid(idx, idx)  # vv varies along rows
    return view_pixel_to_dir(spec, uu.ravel(), vv.ravel())


# ---------------------------------------------------------------------------
# Resampling and coverage
# ---------------------------------------------------------------------------


def extract_view(erp: ErpImage, spec: ViewSpec) -> tuple[np.ndarray, np.ndarray]:
    """Slice a perspective view out of an ERP raster.

    Bilinear sampling with longitude wrap-around and latitude clamp.
    Returns ``(raster, mask)`` where raster is (S, S) or (S, S, 3) and the
    mask is all-true for generated views.
    """
    s = spec.size
    dirs = view_pixel_grid_dirs(spec)
    us, vs = _erp_coords_from_dirs(erp.dims, dirs)
    if erp.channels == 1:
        out = bilinear_sample(erp.data, us, vs, wrap_u=True).reshape(s, s)
    else:
        chans = [bilinear_sample(erp.data[:, :, c], us, vs, wrap_u=True).reshape(s, s)
                 for c in range(3)]
        out = np.stack(chans, axis=-1)
    mask = np.ones((s, s), dtype=bool)
    return out, mask


def erp_pixel_grid_dirs(erp_dims: tuple[int, int]) -> np.ndarray:
    """(H*W, 3) unit directions of all ERP pixel centers, row-major."""
    h, w = erp_dims
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    lon = ((uu + 0.5) / w) * (2.0 * math.pi) - math.pi
    lat = math.pi / 2.0 - ((vv + 0.5) / h) * math.pi
    return dir_from_lonlat(lon.ravel(), lat.ravel())


def sample_sphere_dirs(n: int, seed: int = 0) -> np.ndarray:
    """(n, 3) uniformly random unit directions from a seeded generator."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # resample the (measure-zero) degenerate draws
    bad = norms[:, 0] < 1e-12
    while np.any(bad):  # pragma: no cover - astronomically unlikely
        v[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        bad = norms[:, 0] < 1e-12
    return v / norms


def coverage_fraction(views: ViewSet | list[ViewSpec], samples: int,
                      seed: int = 0) -> float:
    """Monte-Carlo fraction of the sphere inside at least one view frustum.

    Deterministic for a given seed. Empty view set returns 0.0.
    """
    specs = list(views)
    if not specs:
        return 0.0
    if samples < 10_000:
        raise InvalidInputError("coverage_fraction needs >= 1e4 samples")
    dirs = sample_sphere_dirs(samples, seed=seed)
    covered = np.zeros(samples, dtype=bool)
    for spec in specs:
        if covered.all():
            break
        todo = ~covered
        _, _, inside = project_dirs_to_view(spec, dirs[todo])
        covered[todo] = inside
    return float(covered.mean())

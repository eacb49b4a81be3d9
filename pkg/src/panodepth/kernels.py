"""Hot numeric kernels with Numba-JIT and pure-NumPy implementations.

The three inner loops that dominate runtime — bilinear raster sampling,
Sobel gradient magnitude, and the per-ray multi-view fusion gather — each
exist twice: an ``@njit`` scalar-loop version and a vectorized NumPy
version. Both paths use identical arithmetic expressions (same operation
order, no fastmath) so their outputs agree bit for bit; tests assert this.

Backend selection:
  * env var ``PANODEPTH_KERNELS=numpy`` forces the NumPy path;
  * ``PANODEPTH_KERNELS=numba`` forces Numba (falls back with a warning if
    the import fails);
  * unset / ``auto``: Numba when importable, NumPy otherwise.

``benchmarks/bench_kernels.py`` times both paths side by side.
"""

from __future__ import annotations

import logging
import os

import numpy as np

log = logging.getLogger(__name__)

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        return decorator


def _resolve_backend() -> str:
    requested = os.environ.get("PANODEPTH_KERNELS", "auto").strip().lower()
    if requested not in ("auto", "numba", "numpy"):
        log.warning("unknown PANODEPTH_KERNELS=%r, using auto", requested)
        requested = "auto"
    if requested == "numpy":
        return "numpy"
    if requested == "numba" and not NUMBA_AVAILABLE:
        log.warning("PANODEPTH_KERNELS=numba but numba is unavailable; using numpy")
        return "numpy"
    return "numba" if NUMBA_AVAILABLE else "numpy"


_BACKEND = _resolve_backend()


def kernel_backend() -> str:
    """Active kernel backend, ``"numba"`` or ``"numpy"``."""
    return _BACKEND


def set_kernel_backend(name: str) -> str:
    """Override the kernel backend at runtime (tests, benchmarks).

    Returns the backend actually selected.
    """
    global _BACKEND
    if name not in ("numba", "numpy", "auto"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        log.warning("numba unavailable; staying on numpy")
        name = "numpy"
    if name == "auto":
        name = "numba" if NUMBA_AVAILABLE else "numpy"
    _BACKEND = name
    return _BACKEND


# ---------------------------------------------------------------------------
# Bilinear sampling at continuous pixel-center coordinates.
#
# Pixel i has its center at coordinate i (the +0.5 offset lives in the
# angular conventions, not here). Rows are clamped (latitude clamp at the
# poles); columns either wrap modulo W (equirectangular longitude) or clamp
# (perspective-view rasters, patch grids).
# ---------------------------------------------------------------------------


def _bilinear_sample_numpy(img: np.ndarray, us: np.ndarray, vs: np.ndarray,
                           wrap_u: bool) -> np.ndarray:
    H, W = img.shape
    v = np.minimum(np.maximum(vs, -0.5), H - 0.5)
    v0 = np.floor(v)
    fv = v - v0
    r0 = np.minimum(np.maximum(v0, 0.0), H - 1.0).astype(np.int64)
    r1 = np.minimum(np.maximum(v0 + 1.0, 0.0), H - 1.0).astype(np.int64)
    if wrap_u:
        u0 = np.floor(us)
        fu = us - u0
        c0 = u0.astype(np.int64) % W
        c1 = (c0 + 1) % W
    else:
        u = np.minimum(np.maximum(us, -0.5), W - 0.5)
        u0 = np.floor(u)
        fu = u - u0
        c0 = np.minimum(np.maximum(u0, 0.0), W - 1.0).astype(np.int64)
        c1 = np.minimum(np.maximum(u0 + 1.0, 0.0), W - 1.0).astype(np.int64)
    top = (1.0 - fu) * img[r0, c0] + fu * img[r0, c1]
    bot = (1.0 - fu) * img[r1, c0] + fu * img[r1, c1]
    return (1.0 - fv) * top + fv * bot


@njit(cache=True)
def _bilinear_sample_numba(img, us, vs, wrap_u):  # pragma: no cover - jitted
    H, W = img.shape
    n = us.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        v = min(max(vs[i], -0.5), H - 0.5)
        v0 = np.floor(v)
        fv = v - v0
        r0 = int(min(max(v0, 0.0), H - 1.0))
        r1 = int(min(max(v0 + 1.0, 0.0), H - 1.0))
        if wrap_u:
            u0 = np.floor(us[i])
            fu = us[i] - u0
            c0 = int(u0) % W
            c1 = (c0 + 1) % W
        else:
            u = min(max(us[i], -0.5), W - 0.5)
            u0 = np.floor(u)
            fu = u - u0
            c0 = int(min(max(u0, 0.0), W - 1.0))
            c1 = int(min(max(u0 + 1.0, 0.0), W - 1.0))
        top = (1.0 - fu) * img[r0, c0] + fu * img[r0, c1]
        bot = (1.0 - fu) * img[r1, c0] + fu * img[r1, c1]
        out[i] = (1.0 - fv) * top + fv * bot
    return out


def bilinear_sample(img: np.ndarray, us: np.ndarray, vs: np.ndarray,
                    wrap_u: bool = False) -> np.ndarray:
    """Sample a 2-D raster at continuous coordinates.

    Args:
        img: (H, W) float64 raster.
        us, vs: flat arrays of continuous column/row coordinates.
        wrap_u: wrap columns modulo W (equirectangular longitude) instead
            of clamping.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    us = np.ascontiguousarray(us, dtype=np.float64)
    vs = np.ascontiguousarray(vs, dtype=np.float64)
    if _BACKEND == "numba":
        return _bilinear_sample_numba(img, us, vs, wrap_u)
    return _bilinear_sample_numpy(img, us, vs, wrap_u)


# ---------------------------------------------------------------------------
# 3x3 Sobel gradient magnitude with replicate border padding.
#
# Both paths evaluate the exact grouped expression
#   gx = (p02-p00) + 2*(p12-p10) + (p22-p20)
#   gy = (p20-p00) + 2*(p21-p01) + (p22-p02)
# so results match bit for bit.
# ---------------------------------------------------------------------------


def _sobel_magnitude_numpy(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, 1, mode="edge")
    p00 = p[0:-2, 0:-2]
    p01 = p[0:-2, 1:-1]
    p02 = p[0:-2, 2:]
    p10 = p[1:-1, 0:-2]
    p12 = p[1:-1, 2:]
    p20 = p[2:, 0:-2]
    p21 = p[2:, 1:-1]
    p22 = p[2:, 2:]
    gx = (p02 - p00) + 2.0 * (p12 - p10) + (p22 - p20)
    gy = (p20 - p00) + 2.0 * (p21 - p01) + (p22 - p02)
    return np.sqrt(gx * gx + gy * gy)


@njit(cache=True)
def _sobel_magnitude_numba(img):  # pragma: no cover - jitted
    H, W = img.shape
    out = np.empty((H, W), dtype=np.float64)
    for y in range(H):
        ym = max(y - 1, 0)
        yp = min(y + 1, H - 1)
        for x in range(W):
            xm = max(x - 1, 0)
            xp = min(x + 1, W - 1)
            p00 = img[ym, xm]
            p01 = img[ym, x]
            p02 = img[ym, xp]
            p10 = img[y, xm]
            p12 = img[y, xp]
            p20 = img[yp, xm]
            p21 = img[yp, x]
            p22 = img[yp, xp]
            gx = (p02 - p00) + 2.0 * (p12 - p10) + (p22 - p20)
            gy = (p20 - p00) + 2.0 * (p21 - p01) + (p22 - p02)
            out[y, x] = np.sqrt(gx * gx + gy * gy)
    return out


def sobel_magnitude(img: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude of a single-channel raster.

    Replicate padding at the border; standard 3x3 kernels.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError("sobel_magnitude expects a 2-D raster of size >= 3x3")
    if _BACKEND == "numba":
        return _sobel_magnitude_numba(img)
    return _sobel_magnitude_numpy(img)


# ---------------------------------------------------------------------------
# Fusion gather: for every panorama ray, project into each square view,
# bilinearly sample that view's distance and weight rasters (only where all
# four touched pixels are valid), and accumulate the weighted average.
#
# Views are visited in array order; callers sort by view index so output is
# independent of input permutation. A sample contributes only when the ray
# is inside the frustum and the four bilinear neighbors are all valid.
# ---------------------------------------------------------------------------


def _fuse_gather_numpy(dirs, rot_wc, tan_half, depth, weight, valid):
    n = dirs.shape[0]
    K, S, _ = depth.shape
    acc_wd = np.zeros(n, dtype=np.float64)
    acc_w = np.zeros(n, dtype=np.float64)
    count = np.zeros(n, dtype=np.int32)
    dx = dirs[:, 0]
    dy = dirs[:, 1]
    dz = dirs[:, 2]
    for k in range(K):
        R = rot_wc[k]
        th = tan_half[k]
        x = R[0, 0] * dx + R[0, 1] * dy + R[0, 2] * dz
        y = R[1, 0] * dx + R[1, 1] * dy + R[1, 2] * dz
        z = R[2, 0] * dx + R[2, 1] * dy + R[2, 2] * dz
        with np.errstate(divide="ignore", invalid="ignore"):
            px = x / z
            py = y / z
        inside = (z > 0.0) & (np.abs(px) <= th) & (np.abs(py) <= th)
        u = (px / th + 1.0) * 0.5 * S - 0.5
        v = (1.0 - py / th) * 0.5 * S - 0.5
        u = np.where(inside, u, 0.0)
        v = np.where(inside, v, 0.0)
        u0 = np.floor(np.minimum(np.maximum(u, -0.5), S - 0.5))
        v0 = np.floor(np.minimum(np.maximum(v, -0.5), S - 0.5))
        fu = np.minimum(np.maximum(u, -0.5), S - 0.5) - u0
        fv = np.minimum(np.maximum(v, -0.5), S - 0.5) - v0
        c0 = np.minimum(np.maximum(u0, 0.0), S - 1.0).astype(np.int64)
        c1 = np.minimum(np.maximum(u0 + 1.0, 0.0), S - 1.0).astype(np.int64)
        r0 = np.minimum(np.maximum(v0, 0.0), S - 1.0).astype(np.int64)
        r1 = np.minimum(np.maximum(v0 + 1.0, 0.0), S - 1.0).astype(np.int64)
        vk = valid[k]
        ok = inside & (vk[r0, c0] != 0) & (vk[r0, c1] != 0) \
            & (vk[r1, c0] != 0) & (vk[r1, c1] != 0)
        dk = depth[k]
        wk = weight[k]
        dtop = (1.0 - fu) * dk[r0, c0] + fu * dk[r0, c1]
        dbot = (1.0 - fu) * dk[r1, c0] + fu * dk[r1, c1]
        dval = (1.0 - fv) * dtop + fv * dbot
        wtop = (1.0 - fu) * wk[r0, c0] + fu * wk[r0, c1]
        wbot = (1.0 - fu) * wk[r1, c0] + fu * wk[r1, c1]
        wval = (1.0 - fv) * wtop + fv * wbot
        acc_wd = acc_wd + np.where(ok, wval * dval, 0.0)
        acc_w = acc_w + np.where(ok, wval, 0.0)
        count = count + ok.astype(np.int32)
    with np.errstate(divide="ignore", invalid="ignore"):
        fused = np.where(count > 0, acc_wd / acc_w, np.nan)
    return fused, acc_w, count


@njit(cache=True)
def _fuse_gather_numba(dirs, rot_wc, tan_half, depth, weight, valid):  # pragma: no cover - jitted
    n = dirs.shape[0]
    K = depth.shape[0]
    S = depth.shape[1]
    fused = np.empty(n, dtype=np.float64)
    acc_w_out = np.zeros(n, dtype=np.float64)
    count = np.zeros(n, dtype=np.int32)
    for i in range(n):
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        acc_wd = 0.0
        acc_w = 0.0
        cnt = 0
        for k in range(K):
            th = tan_half[k]
            x = rot_wc[k, 0, 0] * dx + rot_wc[k, 0, 1] * dy + rot_wc[k, 0, 2] * dz
            y = rot_wc[k, 1, 0] * dx + rot_wc[k, 1, 1] * dy + rot_wc[k, 1, 2] * dz
            z = rot_wc[k, 2, 0] * dx + rot_wc[k, 2, 1] * dy + rot_wc[k, 2, 2] * dz
            if z <= 0.0:
                continue
            px = x / z
            py = y / z
            if abs(px) > th or abs(py) > th:
                continue
            u = (px / th + 1.0) * 0.5 * S - 0.5
            v = (1.0 - py / th) * 0.5 * S - 0.5
            uc = min(max(u, -0.5), S - 0.5)
            vc = min(max(v, -0.5), S - 0.5)
            u0 = np.floor(uc)
            v0 = np.floor(vc)
            fu = uc - u0
            fv = vc - v0
            c0 = int(min(max(u0, 0.0), S - 1.0))
            c1 = int(min(max(u0 + 1.0, 0.0), S - 1.0))
            r0 = int(min(max(v0, 0.0), S - 1.0))
            r1 = int(min(max(v0 + 1.0, 0.0), S - 1.0))
            if valid[k, r0, c0] == 0 or valid[k, r0, c1] == 0 \
                    or valid[k, r1, c0] == 0 or valid[k, r1, c1] == 0:
                continue
            dtop = (1.0 - fu) * depth[k, r0, c0] + fu * depth[k, r0, c1]
            dbot = (1.0 - fu) * depth[k, r1, c0] + fu * depth[k, r1, c1]
            dval = (1.0 - fv) * dtop + fv * dbot
            wtop = (1.0 - fu) * weight[k, r0, c0] + fu * weight[k, r0, c1]
            wbot = (1.0 - fu) * weight[k, r1, c0] + fu * weight[k, r1, c1]
            wval = (1.0 - fv) * wtop + fv * wbot
            acc_wd = acc_wd + wval * dval
            acc_w = acc_w + wval
            cnt = cnt + 1
        if cnt > 0:
            fused[i] = acc_wd / acc_w
        else:
            fused[i] = np.nan
        acc_w_out[i] = acc_w
        count[i] = cnt
    return fused, acc_w_out, count


def fuse_gather(dirs: np.ndarray, rot_wc: np.ndarray, tan_half: np.ndarray,
                depth: np.ndarray, weight: np.ndarray,
                valid: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted multi-view gather along panorama rays.

    Args:
        dirs: (N, 3) unit ray directions in the shared frame.
        rot_wc: (K, 3, 3) world-to-camera rotation matrices.
        tan_half: (K,) tangent of each view's half field of view.
        depth: (K, S, S) per-view distance rasters (NaN on invalid pixels).
        weight: (K, S, S) per-view positive fusion weights.
        valid: (K, S, S) uint8 validity rasters.

    Returns:
        (fused, weight_sum, count): flat arrays of length N; ``fused`` is
        NaN where no view contributed.
    """
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    rot_wc = np.ascontiguousarray(rot_wc, dtype=np.float64)
    tan_half = np.ascontiguousarray(tan_half, dtype=np.float64)
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    weight = np.ascontiguousarray(weight, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.uint8)
    if _BACKEND == "numba":
        return _fuse_gather_numba(dirs, rot_wc, tan_half, depth, weight, valid)
    return _fuse_gather_numpy(dirs, rot_wc, tan_half, depth, weight, valid)


def warmup() -> None:
    """Trigger JIT compilation of all kernels on tiny inputs."""
    if _BACKEND != "numba":
        return
    img = np.zeros((4, 4))
    uv = np.array([1.0, 2.0])
    bilinear_sample(img, uv, uv, wrap_u=True)
    bilinear_sample(img, uv, uv, wrap_u=False)
    sobel_magnitude(img)
    dirs = np.array([[0.0, 0.0, 1.0]])
    rot = np.eye(3)[None, :, :]
    stack = np.ones((1, 8, 8))
    fuse_gather(dirs, rot, np.array([1.0]), stack, stack,
                np.ones((1, 8, 8), dtype=np.uint8))

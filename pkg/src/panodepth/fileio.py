"""Raster file formats: 8-bit PNG, PFM, and the raw F32R format.

F32R byte layout (all little-endian):
    bytes 0..3    ASCII magic ``F32R``
    bytes 4..15   three uint32 dimensions (d0, d1, d2); 2-D rasters use
                  (rows, cols, 1)
    bytes 16..    d0*d1*d2 float32 values, row-major

PFM follows the conventional format: ``Pf``/``PF`` header, width/height
line, scale line (negative = little-endian; this package writes -1.0),
then rows bottom-to-top as float32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError

F32R_MAGIC = b"F32R"
F32R_HEADER = struct.Struct("<4sIII")


# ---------------------------------------------------------------------------
# F32R
# ---------------------------------------------------------------------------


def write_f32r(path: str | Path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        dims = (arr.shape[0], arr.shape[1], 1)
    elif arr.ndim == 3:
        dims = arr.shape
    else:
        raise InvalidInputError("F32R stores 2-D or 3-D rasters")
    with open(path, "wb") as fh:
        fh.write(F32R_HEADER.pack(F32R_MAGIC, *dims))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32r(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(F32R_HEADER.size)
        if len(header) != F32R_HEADER.size:
            raise InvalidInputError(f"{path}: truncated F32R header")
        magic, d0, d1, d2 = F32R_HEADER.unpack(header)
        if magic != F32R_MAGIC:
            raise InvalidInputError(f"{path}: bad F32R magic {magic!r}")
        payload = fh.read()
    expected = d0 * d1 * d2 * 4
    if len(payload) != expected:
        raise InvalidInputError(
            f"{path}: expected {expected} payload bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(d0, d1, d2)
    return arr[:, :, 0] if d2 == 1 else arr


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def write_pfm(path: str | Path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise InvalidInputError("write_pfm expects a single-channel raster")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise InvalidInputError(f"{path}: not a PFM file")
        channels = 3 if magic == b"PF" else 1
        dims = fh.readline().split()
        if len(dims) != 2:
            raise InvalidInputError(f"{path}: malformed PFM dimensions")
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        payload = fh.read(w * h * channels * 4)
    if len(payload) != w * h * channels * 4:
        raise InvalidInputError(f"{path}: truncated PFM payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(h, w, channels)[::-1]
    arr = arr.astype(np.float32)
    if abs(scale) not in (0.0, 1.0):
        arr = arr * abs(scale)
    return arr[:, :, 0] if channels == 1 else arr


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def read_png(path: str | Path) -> np.ndarray:
    """8-bit PNG as float64 in [0, 1]; (H, W) or (H, W, 3)."""
    img = Image.open(path)
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_png(path: str | Path, data: np.ndarray) -> None:
    """Write [0, 1] float data as 8-bit grayscale or RGB PNG."""
    arr = np.asarray(data, dtype=np.float64)
    arr = np.clip(arr, 0.0, 1.0)
    out = np.round(arr * 255.0).astype(np.uint8)
    mode = "L" if out.ndim == 2 else "RGB"
    Image.fromarray(out, mode=mode).save(path)


# ---------------------------------------------------------------------------
# Depth preview (turbo colormap)
# ---------------------------------------------------------------------------

# Turbo colormap as a 64-knot 8-bit lookup table (knots at i/63),
# linearly interpolated.
_TURBO_LUT = np.array([
    (48, 18, 59), (53, 30, 88), (57, 42, 115), (61, 53, 139), (64, 64, 162), (66, 75, 181), (68, 86, 199), (70, 97, 214),
    (70, 107, 227), (71, 118, 238), (70, 128, 246), (69, 138, 252), (66, 148, 255), (61, 158, 254), (55, 168, 250), (47, 178, 244),
    (39, 190, 233), (32, 199, 223), (27, 208, 213), (24, 215, 202), (24, 222, 192), (26, 228, 182), (32, 234, 172), (42, 239, 161),
    (53, 243, 148), (67, 247, 135), (82, 250, 122), (97, 252, 108), (113, 254, 95), (128, 255, 83), (143, 255, 73), (156, 254, 64),
    (169, 251, 57), (180, 248, 54), (190, 244, 52), (200, 239, 52), (210, 233, 53), (219, 226, 54), (227, 219, 56), (235, 211, 57),
    (241, 203, 58), (246, 195, 58), (250, 186, 57), (252, 177, 54), (254, 167, 50), (254, 155, 45), (254, 144, 41), (252, 132, 35),
    (249, 117, 29), (245, 105, 24), (241, 93, 19), (236, 83, 15), (231, 73, 12), (225, 65, 9), (218, 57, 7), (210, 49, 5),
    (202, 42, 4), (193, 35, 2), (183, 29, 2), (172, 23, 1), (161, 18, 1), (149, 13, 1), (136, 8, 2), (122, 4, 3),
], dtype=np.float64) / 255.0


def turbo_colormap(x: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to turbo RGB in [0, 1]."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    pos = x * (len(_TURBO_LUT) - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, len(_TURBO_LUT) - 1)
    frac = (pos - i0)[..., None]
    return (1.0 - frac) * _TURBO_LUT[i0] + frac * _TURBO_LUT[i1]


def write_depth_preview(path: str | Path, depth: np.ndarray) -> None:
    """Turbo-mapped PNG preview of a depth raster.

    Valid (finite) depths are min-max normalized before mapping; invalid
    pixels render black.
    """
    d = np.asarray(depth, dtype=np.float64)
    finite = np.isfinite(d)
    norm = np.zeros_like(d)
    if finite.any():
        lo = d[finite].min()
        hi = d[finite].max()
        span = hi - lo
        if span > 0:
            norm[finite] = (d[finite] - lo) / span
        else:
            norm[finite] = 0.5
    rgb = turbo_colormap(norm)
    rgb[~finite] = 0.0
    write_png(path, rgb)

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from panodepth.geometry import ErpImage
from panodepth.kernels import warmup


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    warmup()


def smooth_erp(height: int, width: int, channels: int = 1) -> ErpImage:
    """Band-limited test panorama: low-order polynomial of the direction
    components, smooth everywhere on the sphere (no pole artifacts)."""
    uu, vv = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    lon = ((uu + 0.5) / width) * 2.0 * math.pi - math.pi
    lat = math.pi / 2 - ((vv + 0.5) / height) * math.pi
    x = np.cos(lat) * np.sin(lon)
    y = np.sin(lat)
    z = np.cos(lat) * np.cos(lon)
    base = 0.5 + 0.2 * x + 0.15 * y * z + 0.1 * (x * x - z * z)
    if channels == 1:
        return ErpImage(data=np.clip(base, 0.0, 1.0))
    chans = [base, 0.5 + 0.18 * y + 0.12 * x * z, 0.5 - 0.15 * x * y + 0.1 * z]
    return ErpImage(data=np.clip(np.stack(chans, axis=-1), 0.0, 1.0))


def smooth_erp_fn(dirs: np.ndarray) -> np.ndarray:
    """The single-channel smooth_erp field evaluated directly at directions."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    return np.clip(0.5 + 0.2 * x + 0.15 * y * z + 0.1 * (x * x - z * z),
                   0.0, 1.0)


def dyadic_raster(rng: np.random.Generator, shape) -> np.ndarray:
    """Raster of exactly representable values k/1024; integer-weighted sums
    over such values are exact in float64, making 'exact' comparisons
    well-defined regardless of summation order."""
    return rng.integers(0, 1024, size=shape).astype(np.float64) / 1024.0

"""Benchmark the Numba and NumPy kernel paths side by side.

Usage:
    python benchmarks/bench_kernels.py [--erp-height 512] [--views 12]
                                       [--view-size 518] [--repeats 5]

Times the three hot kernels (bilinear resampling, Sobel magnitude, fusion
gather) on pipeline-realistic shapes and prints a speedup table. The first
Numba call per kernel compiles; compilation is excluded by a warmup pass.
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from panodepth import kernels as K
from panodepth.geometry import erp_pixel_grid_dirs, rotation_cam_to_world
from panodepth.planner import PlannerConfig, base_rig


def time_call(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_cases(erp_height: int, n_views: int, view_size: int):
    rng = np.random.default_rng(0)
    h, w = erp_height, erp_height * 2
    erp = rng.uniform(0, 1, (h, w))
    us = rng.uniform(-1, w + 1, view_size * view_size)
    vs = rng.uniform(-1, h + 1, view_size * view_size)

    rig = base_rig(PlannerConfig(n_base=max(6, n_views - 2),
                                 view_size=view_size))
    specs = list(rig)[:n_views] if n_views <= len(rig) else list(rig)
    k = len(specs)
    rot = np.stack([rotation_cam_to_world(s).T for s in specs])
    tan_half = np.array([s.tan_half_fov for s in specs])
    depth = rng.uniform(0.5, 5.0, (k, view_size, view_size))
    weight = rng.uniform(1e-6, 1.0, (k, view_size, view_size))
    valid = np.ones((k, view_size, view_size), dtype=np.uint8)
    dirs = erp_pixel_grid_dirs((h, w))

    return {
        "bilinear_sample": lambda: K.bilinear_sample(erp, us, vs, wrap_u=True),
        "sobel_magnitude": lambda: K.sobel_magnitude(erp),
        "fuse_gather": lambda: K.fuse_gather(dirs, rot, tan_half, depth,
                                             weight, valid),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--erp-height", type=int, default=512)
    parser.add_argument("--views", type=int, default=12)
    parser.add_argument("--view-size", type=int, default=518)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not K.NUMBA_AVAILABLE:
        print("numba not available; nothing to compare")
        return

    cases = make_cases(args.erp_height, args.views, args.view_size)
    print(f"ERP {args.erp_height * 2}x{args.erp_height}, "
          f"{args.views} views at {args.view_size}px, "
          f"best of {args.repeats}\n")
    print(f"{'kernel':<18} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    for name, fn in cases.items():
        K.set_kernel_backend("numba")
        fn()  # JIT warmup outside the timed region
        t_numba = time_call(fn, args.repeats)
        K.set_kernel_backend("numpy")
        t_numpy = time_call(fn, args.repeats)
        print(f"{name:<18} {t_numpy * 1e3:>8.2f}ms {t_numba * 1e3:>8.2f}ms "
              f"{t_numpy / t_numba:>8.2f}x")
    K.set_kernel_backend("auto")


if __name__ == "__main__":
    main()

import math

import numpy as np
import pytest

from panodepth.errors import ConfigError, InvalidInputError
from panodepth.geometry import (ErpImage, ViewSpec, coverage_fraction,
                                dir_from_lonlat, dir_to_erp_pixel,
                                erp_pixel_to_dir, extract_view,
                                project_dirs_to_view, sample_sphere_dirs,
                                view_pixel_grid_dirs, view_pixel_to_dir)

from conftest import smooth_erp, smooth_erp_fn
import oracles


def angle_between(a, b):
    chord = np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)
    return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))


class TestErpPixelToDir:
    def test_image_center_is_forward(self):
        d = erp_pixel_to_dir((512, 1024), 1024 / 2 - 0.5, 512 / 2 - 0.5)
        np.testing.assert_allclose(d, [0.0, 0.0, 1.0], atol=1e-12)

    def test_axis_directions(self):
        # lon = pi/2, lat = 0 -> +x
        d = dir_from_lonlat(math.pi / 2, 0.0)
        np.testing.assert_allclose(d, [1.0, 0.0, 0.0], atol=1e-12)
        # lon = lat = pi/4 -> (0.5, sqrt(2)/2, 0.5)
        d = dir_from_lonlat(math.pi / 4, math.pi / 4)
        np.testing.assert_allclose(d, [0.5, math.sqrt(2) / 2, 0.5], atol=1e-12)

    def test_monotone_in_longitude(self):
        w, h = 64, 32
        us = np.arange(w, dtype=float)
        dirs = erp_pixel_to_dir((h, w), us, np.full(w, h / 2 - 0.5))
        lon = np.arctan2(dirs[:, 0], dirs[:, 2])
        assert np.all(np.diff(lon) > 0)

    def test_out_of_range_raises(self):
        with pytest.raises(InvalidInputError):
            erp_pixel_to_dir((32, 64), 64.0, 10.0)
        with pytest.raises(InvalidInputError):
            erp_pixel_to_dir((32, 64), 10.0, -1.0)


class TestDirToErpPixel:
    def test_forward_maps_to_center(self):
        u, v = dir_to_erp_pixel((512, 1024), [0.0, 0.0, 1.0])
        assert u == pytest.approx(1024 / 2 - 0.5, abs=1e-9)
        assert v == pytest.approx(512 / 2 - 0.5, abs=1e-9)

    def test_north_pole_tie_break(self):
        u, v = dir_to_erp_pixel((512, 1024), [0.0, 1.0, 0.0])
        assert v == pytest.approx(-0.5, abs=1e-9)
        assert u == pytest.approx(1024 / 2 - 0.5, abs=1e-12)

    def test_zero_vector_raises(self):
        with pytest.raises(InvalidInputError):
            dir_to_erp_pixel((32, 64), [0.0, 0.0, 0.0])

    def test_non_unit_raises(self):
        with pytest.raises(InvalidInputError):
            dir_to_erp_pixel((32, 64), [0.0, 0.0, 2.0])

    def test_roundtrip_100k_random_directions(self):
        dims = (512, 1024)
        dirs = sample_sphere_dirs(100_000, seed=42)
        u, v = dir_to_erp_pixel(dims, dirs)
        back = erp_pixel_to_dir(dims, u, v)
        assert angle_between(dirs, back).max() <= 1e-9


class TestViewPixelToDir:
    def test_center_pixel_forward(self):
        spec = ViewSpec(yaw=0.0, pitch=0.0, fov=math.pi / 2, size=64)
        d = view_pixel_to_dir(spec, (64 - 1) / 2, (64 - 1) / 2)
        np.testing.assert_allclose(d, [0.0, 0.0, 1.0], atol=1e-12)

    def test_corner_at_90deg_fov(self):
        # plane coords (1, 1) sit at the continuous corner u = S - 0.5, v = -0.5
        spec = ViewSpec(yaw=0.0, pitch=0.0, fov=math.pi / 2, size=64)
        d = view_pixel_to_dir(spec, 64 - 0.5, -0.5)
        np.testing.assert_allclose(d, np.array([1.0, 1.0, 1.0]) / math.sqrt(3),
                                   atol=1e-12)
        lon = math.atan2(d[0], d[2])
        lat = math.asin(d[1])
        assert lon == pytest.approx(math.radians(45), abs=1e-12)
        assert lat == pytest.approx(math.radians(35.26438968), abs=1e-6)

    def test_yaw_rotates_to_plus_x(self):
        spec = ViewSpec(yaw=math.pi / 2, pitch=0.0, fov=math.pi / 2, size=64)
        d = view_pixel_to_dir(spec, (64 - 1) / 2, (64 - 1) / 2)
        np.testing.assert_allclose(d, [1.0, 0.0, 0.0], atol=1e-12)

    def test_pitch_up_looks_at_zenith(self):
        spec = ViewSpec(yaw=0.3, pitch=math.pi / 2, fov=math.pi / 2, size=64)
        d = view_pixel_to_dir(spec, (64 - 1) / 2, (64 - 1) / 2)
        np.testing.assert_allclose(d, [0.0, 1.0, 0.0], atol=1e-12)

    def test_inverse_projection_roundtrip(self):
        spec = ViewSpec(yaw=1.1, pitch=-0.4, fov=math.radians(100), size=128)
        rng = np.random.default_rng(3)
        u = rng.uniform(0, 127, 20_000)
        v = rng.uniform(0, 127, 20_000)
        d = view_pixel_to_dir(spec, u, v)
        u2, v2, inside = project_dirs_to_view(spec, d)
        assert inside.all()
        assert max(np.abs(u2 - u).max(), np.abs(v2 - v).max()) <= 1e-6

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            ViewSpec(yaw=0, pitch=0, fov=math.pi, size=64)
        with pytest.raises(ConfigError):
            ViewSpec(yaw=0, pitch=0, fov=1.0, size=4)
        with pytest.raises(ConfigError):
            ViewSpec(yaw=0, pitch=2.0, fov=1.0, size=64)


class TestErpImage:
    def test_aspect_enforced_by_default(self):
        with pytest.raises(ConfigError):
            ErpImage(data=np.zeros((32, 65)))
        ErpImage(data=np.zeros((32, 65)), require_2to1=False)

    def test_too_small_raises(self):
        with pytest.raises(ConfigError):
            ErpImage(data=np.zeros((1, 2)))


class TestExtractView:
    def test_constant_erp_gives_constant_view(self):
        erp = ErpImage(data=np.full((32, 64), 0.73))
        view, mask = extract_view(erp, ViewSpec(yaw=0.5, pitch=0.2,
                                                fov=2.0, size=32))
        np.testing.assert_allclose(view, 0.73, atol=1e-12)
        assert mask.all()

    def test_latitude_gradient_matches_analytic(self):
        h, w = 128, 256
        vv = np.arange(h, dtype=np.float64)
        lat_rows = math.pi / 2 - (vv + 0.5) / h * math.pi
        erp = ErpImage(data=np.tile(lat_rows[:, None], (1, w)))
        spec = ViewSpec(yaw=0.4, pitch=0.0, fov=math.radians(120), size=64)
        view, _ = extract_view(erp, spec)
        dirs = view_pixel_grid_dirs(spec)
        lat = np.arcsin(np.clip(dirs[:, 1], -1, 1)).reshape(64, 64)
        assert np.abs(view - lat).max() <= 0.5 * math.pi / h

    def test_reproject_roundtrip_mae(self):
        # extract a 120 deg view from a band-limited panorama, then push it
        # back to the panorama with an independent reprojection and compare
        h, w = 256, 512
        erp = smooth_erp(h, w)
        spec = ViewSpec(yaw=0.9, pitch=0.25, fov=math.radians(120), size=518)
        view, _ = extract_view(erp, spec)

        uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        lon = ((uu + 0.5) / w) * 2 * math.pi - math.pi
        lat = math.pi / 2 - ((vv + 0.5) / h) * math.pi
        d = np.stack([np.cos(lat) * np.sin(lon), np.sin(lat),
                      np.cos(lat) * np.cos(lon)], axis=-1).reshape(-1, 3)
        rot = np.array(oracles.rot_cam_to_world(spec.yaw, spec.pitch))
        cam = d @ rot
        th = math.tan(spec.fov / 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            px = cam[:, 0] / cam[:, 2]
            py = cam[:, 1] / cam[:, 2]
        covered = (cam[:, 2] > 0) & (np.abs(px) <= th) & (np.abs(py) <= th)
        s = spec.size
        us = (px[covered] / th + 1.0) * 0.5 * s - 0.5
        vs = (1.0 - py[covered] / th) * 0.5 * s - 0.5
        resampled = np.array([oracles.bilinear_clamped(view, u, v)
                              for u, v in zip(us, vs)])
        mae = np.abs(resampled - erp.data.reshape(-1)[covered]).mean()
        assert mae <= 2.0 / 255.0

    def test_no_seam_across_dateline(self):
        # a view straddling lon = +/-pi must match the analytic field as
        # tightly as one at lon = 0
        h, w = 128, 256
        erp = smooth_erp(h, w)
        for yaw in (0.0, math.pi):
            spec = ViewSpec(yaw=yaw, pitch=0.0, fov=math.radians(100), size=64)
            view, _ = extract_view(erp, spec)
            expected = smooth_erp_fn(view_pixel_grid_dirs(spec)).reshape(64, 64)
            assert np.abs(view - expected).max() <= 2.0 / 255.0

    def test_invariant_under_global_yaw_roll(self):
        h, w = 128, 256
        erp = smooth_erp(h, w)
        shift = 40  # integer column roll = exact yaw rotation of content
        rolled = ErpImage(data=np.roll(erp.data, -shift, axis=1))
        dyaw = shift * 2.0 * math.pi / w
        spec = ViewSpec(yaw=0.7, pitch=0.1, fov=2.0, size=48)
        spec_rot = ViewSpec(yaw=0.7 - dyaw, pitch=0.1, fov=2.0, size=48)
        view_a, _ = extract_view(erp, spec)
        view_b, _ = extract_view(rolled, spec_rot)
        assert np.abs(view_a - view_b).max() <= 2.0 / 255.0

    def test_rgb_view_shape(self):
        erp = smooth_erp(64, 128, channels=3)
        view, mask = extract_view(erp, ViewSpec(yaw=0, pitch=0, fov=1.5, size=32))
        assert view.shape == (32, 32, 3)
        assert mask.shape == (32, 32) and mask.all()


class TestCoverage:
    def test_empty_set_is_zero(self):
        assert coverage_fraction([], 100_000) == 0.0

    def test_cubemap_with_margin_is_full(self):
        specs = [ViewSpec(yaw=y, pitch=0.0, fov=math.radians(95), size=32)
                 for y in (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)]
        specs.append(ViewSpec(yaw=0.0, pitch=math.pi / 2,
                              fov=math.radians(95), size=32))
        specs.append(ViewSpec(yaw=0.0, pitch=-math.pi / 2,
                              fov=math.radians(95), size=32))
        assert coverage_fraction(specs, 1_000_000) == 1.0

    def test_single_square_view_matches_solid_angle(self):
        spec = ViewSpec(yaw=0.0, pitch=0.0, fov=math.pi / 2, size=32)
        frac = coverage_fraction([spec], 1_000_000, seed=11)
        omega = oracles.square_frustum_solid_angle_quadrature(math.pi / 2)
        expected = omega / (4.0 * math.pi)
        # quadrature cross-check against the closed form 2*pi/3
        assert expected == pytest.approx((2 * math.pi / 3) / (4 * math.pi),
                                         abs=1e-6)
        # MC error at 1e6 samples: sigma ~ 3.7e-4
        assert frac == pytest.approx(expected, abs=2e-3)

    def test_monotone_under_added_views(self):
        specs = [ViewSpec(yaw=0.0, pitch=0.0, fov=1.2, size=32),
                 ViewSpec(yaw=2.0, pitch=0.3, fov=1.2, size=32),
                 ViewSpec(yaw=4.0, pitch=-0.5, fov=1.2, size=32)]
        fracs = [coverage_fraction(specs[:k], 50_000, seed=5)
                 for k in range(1, 4)]
        assert fracs[0] <= fracs[1] <= fracs[2]

    def test_too_few_samples_raises(self):
        spec = ViewSpec(yaw=0.0, pitch=0.0, fov=1.0, size=32)
        with pytest.raises(InvalidInputError):
            coverage_fraction([spec], 100)

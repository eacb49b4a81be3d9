import math

import numpy as np
import pytest

from panodepth.confidence import AttentionTensor
from panodepth.errors import DegenerateInputError, InvalidInputError
from panodepth.fusion import (WEIGHT_FLOOR,
                              PointMapObservation, combine_weights,
                              default_locality_sigma, fuse_to_erp,
                              gather_view_samples, locality,
                              renormalized_transpose, sharpness, symmetry,
                              token_coords, upsample_token_raster)
from panodepth.geometry import ViewSpec
from panodepth.planner import PlannerConfig, base_rig

import oracles


def random_stochastic(rng, t):
    m = rng.uniform(0, 1, (t, t))
    return m / m.sum(axis=1, keepdims=True)


class TestSharpness:
    def test_uniform_row_is_zero(self):
        t = 16
        attn = AttentionTensor(weights=np.full((t, t), 1.0 / t),
                               grid_shape=(4, 4))
        assert abs(sharpness(attn, 0)) <= 1e-12

    def test_one_hot_row_is_one(self):
        attn = AttentionTensor(weights=np.eye(9), grid_shape=(3, 3))
        assert sharpness(attn, 4) == 1.0

    def test_two_equal_masses_over_four_tokens(self):
        row = np.array([0.5, 0.5, 0.0, 0.0])
        w = np.tile(row, (4, 1))
        attn = AttentionTensor(weights=w, grid_shape=(2, 2))
        assert sharpness(attn, 0) == pytest.approx(0.5, abs=1e-12)

    def test_too_few_tokens_rejected(self):
        attn = AttentionTensor(weights=np.ones((1, 1)), grid_shape=(1, 1))
        with pytest.raises(DegenerateInputError):
            sharpness(attn)

    def test_bounds_over_random_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            t = int(rng.integers(2, 30))
            attn = AttentionTensor(weights=random_stochastic(rng, t),
                                   grid_shape=(1, t))
            s = sharpness(attn)
            assert np.all((s >= 0.0) & (s <= 1.0))


class TestLocality:
    def test_self_one_hot_is_one(self):
        attn = AttentionTensor(weights=np.eye(16), grid_shape=(4, 4))
        assert locality(attn, sigma=1.0, k=5) == 1.0

    def test_half_width_distance(self):
        # one-hot at grid distance 3: sigma chosen so the kernel is 0.5
        t = 16
        w = np.zeros((t, t))
        w[0, 3] = 1.0  # token (0,0) -> token (0,3), distance 3 on a 4x4 grid
        for i in range(1, t):
            w[i, i] = 1.0
        attn = AttentionTensor(weights=w, grid_shape=(4, 4))
        sigma = 3.0 / math.sqrt(2.0 * math.log(2.0))
        assert locality(attn, sigma=sigma, k=0) == pytest.approx(0.5, abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        attn = AttentionTensor(weights=random_stochastic(rng, 16),
                               grid_shape=(4, 4))
        coords = token_coords((4, 4))
        got = locality(attn, sigma=1.7)
        for k in range(16):
            expected = oracles.locality_row(attn.weights[k], coords, k, 1.7)
            assert abs(got[k] - expected) <= 1e-12

    def test_default_sigma_is_fraction_of_diagonal(self):
        assert default_locality_sigma((37, 37)) == pytest.approx(
            0.15 * math.hypot(36, 36))

    def test_bounds(self):
        rng = np.random.default_rng(2)
        attn = AttentionTensor(weights=random_stochastic(rng, 25),
                               grid_shape=(5, 5))
        s = locality(attn)
        assert np.all((s >= 0.0) & (s <= 1.0))


class TestSymmetry:
    def test_uniform_doubly_stochastic_is_one(self):
        t = 16
        attn = AttentionTensor(weights=np.full((t, t), 1.0 / t),
                               grid_shape=(4, 4))
        s = symmetry(attn)
        np.testing.assert_allclose(s, 1.0, atol=1e-12)

    def test_disjoint_supports_is_zero(self):
        w = np.array([
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ])
        attn = AttentionTensor(weights=w, grid_shape=(2, 2))
        assert symmetry(attn, 0) == 0.0

    def test_zero_transpose_row_falls_back_to_uniform(self):
        # no token attends to token 0 -> its transpose row is all zero
        w = np.array([
            [0.0, 1.0, 0.0],
            [0.0, 0.5, 0.5],
            [0.0, 0.5, 0.5],
        ])
        attn = AttentionTensor(weights=w, grid_shape=(1, 3))
        mt = renormalized_transpose(attn)
        np.testing.assert_allclose(mt[0], 1.0 / 3.0)
        expected = oracles.symmetry_row(w, 0)
        assert symmetry(attn, 0) == pytest.approx(expected, abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        attn = AttentionTensor(weights=random_stochastic(rng, 8),
                               grid_shape=(2, 4))
        got = symmetry(attn)
        for k in range(8):
            assert abs(got[k] - oracles.symmetry_row(attn.weights, k)) <= 1e-12

    def test_bounds(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            attn = AttentionTensor(weights=random_stochastic(rng, 9),
                                   grid_shape=(3, 3))
            s = symmetry(attn)
            assert np.all((s >= 0.0) & (s <= 1.0))


class TestCombineWeights:
    def test_all_constant_metrics_give_half(self):
        t = 16
        cw = combine_weights(np.full(t, 0.7), np.full(t, 0.2), np.full(t, 0.9),
                             (4, 4), size=8)
        np.testing.assert_allclose(cw.combined, 0.5)
        np.testing.assert_allclose(cw.pixel, 0.5)

    def test_dominant_token_endpoints(self):
        t = 8
        sharp = np.linspace(0.1, 0.9, t)
        cw = combine_weights(sharp, sharp, sharp, (2, 4), size=8)
        assert cw.combined[-1] == 1.0
        assert cw.combined[0] == WEIGHT_FLOOR

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(5)
        sharp = rng.uniform(0, 1, 16)
        loc = rng.uniform(0, 1, 16)
        sym = rng.uniform(0, 1, 16)
        cw = combine_weights(sharp, loc, sym, (4, 4), size=16)
        expected = oracles.combine(sharp, loc, sym)
        assert np.abs(cw.combined - np.array(expected)).max() <= 1e-12

    def test_global_ranges_override(self):
        t = 4
        vals = np.array([0.2, 0.4, 0.6, 0.8])
        cw = combine_weights(vals, vals, vals, (2, 2), size=8,
                             ranges={"sharp": (0.0, 1.0), "loc": (0.0, 1.0),
                                     "sym": (0.0, 1.0), "sum": (0.0, 3.0)})
        np.testing.assert_allclose(cw.combined, vals, atol=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            combine_weights(np.ones(4), np.ones(4), np.ones(5), (2, 2), size=8)


class TestUpsample:
    def test_constant_grid_upsamples_to_constant(self):
        out = upsample_token_raster(np.full(9, 0.3), (3, 3), 12)
        np.testing.assert_allclose(out, 0.3, atol=1e-15)

    def test_patch_center_alignment(self):
        vals = np.arange(4, dtype=float).reshape(2, 2)
        out = upsample_token_raster(vals, (2, 2), 8)
        assert out[0, 0] == vals[0, 0]  # corner half-patch is edge-clamped
        # pixel (2,2) maps to grid coords (0.125, 0.125):
        # bilinear of [[0,1],[2,3]] there is 0.375
        assert out[2, 2] == pytest.approx(0.375, abs=1e-15)
        # midpoint between patch centers (pixel 3.5) averages the patches
        mid = 0.5 * (out[3, 3] + out[4, 4])
        assert mid == pytest.approx(vals.mean(), abs=1e-12)


def unit_sphere_observation(spec: ViewSpec, index: int) -> PointMapObservation:
    from panodepth.geometry import view_pixel_grid_dirs
    dirs = view_pixel_grid_dirs(spec)
    pts = dirs.reshape(spec.size, spec.size, 3)
    return PointMapObservation(view_index=index, points=pts,
                               valid=np.ones((spec.size, spec.size), bool))


class TestFuseToErp:
    def test_single_view_constant_depth(self):
        spec = ViewSpec(yaw=0.0, pitch=0.0, fov=2.0, size=16)
        obs = unit_sphere_observation(spec, 0)
        obs2 = PointMapObservation(view_index=0, points=obs.points * 2.0,
                                   valid=obs.valid)
        fused = fuse_to_erp([obs2], [np.full((16, 16), 0.42)], [spec], (16, 32))
        got = fused.depth[fused.valid]
        np.testing.assert_allclose(got, 2.0, atol=1e-12)

    def test_worked_two_view_average(self):
        # two coincident views, constant depths 2 and 4, weights 1 and 3
        spec = ViewSpec(yaw=0.0, pitch=0.0, fov=2.0, size=16)
        a = unit_sphere_observation(spec, 0)
        obs = [PointMapObservation(0, a.points * 2.0, a.valid),
               PointMapObservation(1, a.points * 4.0, a.valid)]
        weights = [np.full((16, 16), 1.0), np.full((16, 16), 3.0)]
        fused = fuse_to_erp(obs, weights, [spec, spec], (16, 32))
        got = fused.depth[fused.valid]
        np.testing.assert_allclose(got, 3.5, atol=1e-12)
        assert np.all(fused.count[fused.valid] == 2)

    def test_unit_sphere_rig_fuses_to_one(self):
        rig = base_rig(PlannerConfig(n_base=8, view_size=32))
        obs = [unit_sphere_observation(s, i) for i, s in enumerate(rig.specs)]
        weights = [np.ones((32, 32)) for _ in rig.specs]
        fused = fuse_to_erp(obs, weights, rig, (32, 64))
        assert fused.valid.all()
        assert np.abs(fused.depth - 1.0).max() <= 1e-4

    def test_uncovered_pixels_are_nan(self):
        spec = ViewSpec(yaw=0.0, pitch=0.0, fov=1.0, size=16)
        obs = unit_sphere_observation(spec, 0)
        fused = fuse_to_erp([obs], [np.ones((16, 16))], [spec], (16, 32))
        assert (~fused.valid).any()
        assert np.isnan(fused.depth[~fused.valid]).all()
        assert np.all(fused.count[~fused.valid] == 0)

    def test_matches_scalar_gather_oracle(self):
        rng = np.random.default_rng(6)
        specs = [ViewSpec(yaw=0.0, pitch=0.0, fov=1.8, size=12),
                 ViewSpec(yaw=1.2, pitch=0.4, fov=1.5, size=12),
                 ViewSpec(yaw=-2.0, pitch=-0.3, fov=2.1, size=12)]
        obs, weights = [], []
        for i, spec in enumerate(specs):
            base = unit_sphere_observation(spec, i)
            scale = rng.uniform(0.5, 3.0, (12, 12))
            pts = base.points * scale[:, :, None]
            valid = rng.uniform(0, 1, (12, 12)) > 0.15
            pts = np.where(valid[:, :, None], pts, np.nan)
            obs.append(PointMapObservation(i, pts, valid))
            weights.append(rng.uniform(0.1, 1.0, (12, 12)))
        fused = fuse_to_erp(obs, weights, specs, (16, 32))
        exp_f, exp_w, exp_c = oracles.fuse_scalar(
            (16, 32), [(s.yaw, s.pitch, s.fov, s.size) for s in specs],
            [o.distance() for o in obs], weights, [o.valid for o in obs])
        assert np.array_equal(fused.count, exp_c)
        m = fused.valid
        assert np.abs(fused.depth[m] - exp_f[m]).max() <= 1e-12
        assert np.abs(fused.weight_sum[m] - exp_w[m]).max() <= 1e-12

    def test_convexity_bounds(self):
        rng = np.random.default_rng(7)
        specs, obs, weights = _random_config(rng, n_views=4, size=12)
        fused = fuse_to_erp(obs, weights, specs, (16, 32))
        d, w, ok = gather_view_samples(obs, weights, specs, (16, 32))
        m = fused.valid
        samples = np.where(ok, d, np.nan)[:, m]  # every column has a sample
        lo = np.nanmin(samples, axis=0)
        hi = np.nanmax(samples, axis=0)
        assert np.all(fused.depth[m] >= lo - 1e-9)
        assert np.all(fused.depth[m] <= hi + 1e-9)

    def test_depth_scale_equivariance_power_of_two(self):
        rng = np.random.default_rng(8)
        specs, obs, weights = _random_config(rng, n_views=3, size=12)
        fused = fuse_to_erp(obs, weights, specs, (16, 32))
        scaled_obs = [PointMapObservation(o.view_index, o.points * 4.0, o.valid)
                      for o in obs]
        fused4 = fuse_to_erp(scaled_obs, weights, specs, (16, 32))
        m = fused.valid
        assert np.array_equal(fused4.depth[m], 4.0 * fused.depth[m])

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(9)
        specs, obs, weights = _random_config(rng, n_views=3, size=12)
        fused = fuse_to_erp(obs, weights, specs, (16, 32))
        fused_c = fuse_to_erp(obs, [w * 7.3 for w in weights], specs, (16, 32))
        m = fused.valid
        rel = np.abs(fused_c.depth[m] - fused.depth[m]) / np.abs(fused.depth[m])
        assert rel.max() <= 1e-12

    def test_observation_order_invariance_bitwise(self):
        rng = np.random.default_rng(10)
        specs, obs, weights = _random_config(rng, n_views=4, size=12)
        fused = fuse_to_erp(obs, weights, specs, (16, 32))
        perm = [2, 0, 3, 1]
        fused_p = fuse_to_erp([obs[i] for i in perm],
                              [weights[i] for i in perm], specs, (16, 32))
        assert np.array_equal(fused.depth[fused.valid],
                              fused_p.depth[fused_p.valid])
        assert np.array_equal(fused.count, fused_p.count)
        assert np.array_equal(np.isnan(fused.depth), np.isnan(fused_p.depth))

    def test_empty_observations_rejected(self):
        with pytest.raises(InvalidInputError):
            fuse_to_erp([], [], [], (16, 32))

    def test_shape_mismatch_rejected(self):
        spec = ViewSpec(yaw=0.0, pitch=0.0, fov=1.0, size=16)
        obs = unit_sphere_observation(spec, 0)
        with pytest.raises(InvalidInputError):
            fuse_to_erp([obs], [np.ones((8, 8))], [spec], (16, 32))
        with pytest.raises(InvalidInputError):
            fuse_to_erp([obs], [], [spec], (16, 32))


def _random_config(rng, n_views=3, size=12):
    specs, obs, weights = [], [], []
    for i in range(n_views):
        spec = ViewSpec(yaw=float(rng.uniform(-math.pi, math.pi)),
                        pitch=float(rng.uniform(-1.2, 1.2)),
                        fov=float(rng.uniform(0.8, 2.4)), size=size)
        specs.append(spec)
        base = unit_sphere_observation(spec, i)
        scale = rng.uniform(0.5, 4.0, (size, size))
        valid = rng.uniform(0, 1, (size, size)) > 0.1
        pts = np.where(valid[:, :, None], base.points * scale[:, :, None],
                       np.nan)
        obs.append(PointMapObservation(i, pts, valid))
        weights.append(rng.uniform(0.05, 1.0, (size, size)))
    return specs, obs, weights

import numpy as np
import pytest

from panodepth.errors import DegenerateInputError, InvalidInputError
from panodepth.metrics import (align_lstsq, align_median, compute_metrics)

import oracles


class TestAlignMedian:
    def test_double_prediction_halved(self):
        rng = np.random.default_rng(0)
        gt = rng.uniform(1, 5, (16, 16))
        aligned, scale = align_median(2.0 * gt, gt)
        assert scale == pytest.approx(0.5, abs=1e-15)
        np.testing.assert_allclose(aligned, gt, atol=1e-12)

    def test_identity_when_equal(self):
        gt = np.full((8, 8), 3.0)
        aligned, scale = align_median(gt, gt)
        assert scale == 1.0
        assert np.array_equal(aligned, gt)

    def test_medians_match_after_alignment(self):
        rng = np.random.default_rng(1)
        pred = rng.uniform(0.5, 4.0, (32, 32))
        gt = rng.uniform(1.0, 6.0, (32, 32))
        aligned, scale = align_median(pred, gt)
        med_sorted = oracles.median_sorted(list(aligned.ravel()))
        gt_med = oracles.median_sorted(list(gt.ravel()))
        assert abs(med_sorted - gt_med) <= 1e-12

    def test_nonpositive_median_rejected(self):
        with pytest.raises(DegenerateInputError):
            align_median(np.full((4, 4), -1.0), np.full((4, 4), 2.0))

    def test_no_valid_pixels_rejected(self):
        with pytest.raises(DegenerateInputError):
            align_median(np.ones((4, 4)), np.zeros((4, 4)))

    def test_lstsq_mode(self):
        rng = np.random.default_rng(2)
        gt = rng.uniform(1, 3, (8, 8))
        aligned, scale = align_lstsq(0.25 * gt, gt)
        assert scale == pytest.approx(4.0, rel=1e-12)
        np.testing.assert_allclose(aligned, gt, atol=1e-12)


class TestComputeMetrics:
    def test_perfect_prediction(self):
        gt = np.random.default_rng(3).uniform(1, 5, (16, 16))
        m = compute_metrics(gt, gt)
        assert m.abs_rel == 0.0 and m.rmse == 0.0
        assert m.delta1 == m.delta2 == m.delta3 == 1.0
        assert m.valid_count == 256

    def test_quarter_over_prediction_boundary(self):
        # pred = 1.25 * gt: ratio sits exactly on the first threshold, and
        # the strict comparison excludes it from delta1 but not delta2
        gt = np.full((8, 8), 2.0)
        m = compute_metrics(1.25 * gt, gt)
        assert m.abs_rel == pytest.approx(0.25, abs=1e-12)
        assert m.delta1 == 0.0
        assert m.delta2 == 1.0 and m.delta3 == 1.0

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(4)
        pred = rng.uniform(0.5, 5.0, (24, 24))
        gt = rng.uniform(0.5, 5.0, (24, 24))
        mask = rng.uniform(0, 1, (24, 24)) > 0.3
        m = compute_metrics(pred, gt, mask)
        exp = oracles.metrics_scalar(pred, gt, mask)
        assert abs(m.abs_rel - exp[0]) <= 1e-12
        assert abs(m.rmse - exp[1]) <= 1e-12
        assert (m.delta1, m.delta2, m.delta3) == exp[2:]

    def test_delta_monotonicity(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            pred = rng.uniform(0.2, 6.0, (16, 16))
            gt = rng.uniform(0.2, 6.0, (16, 16))
            m = compute_metrics(pred, gt)
            assert 0.0 <= m.delta1 <= m.delta2 <= m.delta3 <= 1.0

    def test_joint_scaling_invariance_and_rmse_equivariance(self):
        rng = np.random.default_rng(6)
        pred = rng.uniform(0.5, 5.0, (16, 16))
        gt = rng.uniform(0.5, 5.0, (16, 16))
        a = compute_metrics(pred, gt)
        b = compute_metrics(3.0 * pred, 3.0 * gt)
        assert b.abs_rel == pytest.approx(a.abs_rel, rel=1e-12)
        assert (b.delta1, b.delta2, b.delta3) == (a.delta1, a.delta2, a.delta3)
        assert b.rmse == pytest.approx(3.0 * a.rmse, rel=1e-12)

    def test_pixel_permutation_invariance(self):
        rng = np.random.default_rng(7)
        pred = rng.uniform(0.5, 5.0, 64)
        gt = rng.uniform(0.5, 5.0, 64)
        perm = rng.permutation(64)
        a = compute_metrics(pred, gt)
        b = compute_metrics(pred[perm], gt[perm])
        assert a.abs_rel == pytest.approx(b.abs_rel, rel=1e-12)
        assert a.rmse == pytest.approx(b.rmse, rel=1e-12)
        assert (a.delta1, a.delta2, a.delta3) == (b.delta1, b.delta2, b.delta3)

    def test_depth_cap_excludes_far_pixels(self):
        gt = np.array([[1.0, 2.0, 10.0, 20.0]])
        pred = np.array([[1.0, 2.0, 10.0, 99.0]])
        m = compute_metrics(pred, gt, cap=10.0)
        assert m.valid_count == 3
        assert m.abs_rel == 0.0

    def test_nan_prediction_excluded(self):
        gt = np.full((4, 4), 2.0)
        pred = gt.copy()
        pred[0, 0] = np.nan
        m = compute_metrics(pred, gt)
        assert m.valid_count == 15

    def test_zero_valid_rejected(self):
        with pytest.raises(DegenerateInputError):
            compute_metrics(np.ones((4, 4)), np.zeros((4, 4)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            compute_metrics(np.ones((4, 4)), np.ones((4, 5)))

    def test_tsv_row_column_order(self):
        gt = np.full((4, 4), 2.0)
        m = compute_metrics(gt, gt, scale=1.5)
        fields = m.tsv_row().split("\t")
        assert len(fields) == 7
        assert float(fields[0]) == 0.0          # abs_rel leads
        assert float(fields[1]) == 1.0          # then delta1..3
        assert float(fields[5]) == 1.5          # scale is echoed

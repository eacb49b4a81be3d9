"""Depth evaluation: Abs Rel, RMSE, and the 1.25^i threshold accuracies,
with median scale alignment for scale-ambiguous predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidInputError


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    rmse: float
    delta1: float
    delta2: float
    delta3: float
    valid_count: int
    scale: float = 1.0

    TSV_COLUMNS = ("abs_rel", "delta1", "delta2", "delta3", "rmse",
                   "scale", "valid_count")

    def tsv_row(self) -> str:
        """Single TSV row; Abs Rel and the deltas lead (benchmark-table
        column order), rmse/scale/valid_count follow."""
        return "\t".join([
            f"{self.abs_rel:.6f}", f"{self.delta1:.6f}",
            f"{self.delta2:.6f}", f"{self.delta3:.6f}",
            f"{self.rmse:.6f}", f"{self.scale:.9g}", str(self.valid_count),
        ])


def _joint_valid(pred: np.ndarray, gt: np.ndarray,
                 mask: np.ndarray | None) -> np.ndarray:
    if pred.shape != gt.shape:
        raise InvalidInputError("pred/gt shape mismatch")
    valid = np.isfinite(pred) & np.isfinite(gt) & (gt > 0.0)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != gt.shape:
            raise InvalidInputError("mask shape mismatch")
        valid &= m
    return valid


def align_median(pred: np.ndarray, gt: np.ndarray,
                 mask: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Scale pred so its median matches the ground-truth median over the
    jointly valid pixels. Returns (scaled pred, scale)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = _joint_valid(pred, gt, mask)
    if not valid.any():
        raise DegenerateInputError("no jointly valid pixels for alignment")
    med_pred = float(np.median(pred[valid]))
    if med_pred <= 0.0:
        raise DegenerateInputError(
            f"prediction median must be positive, got {med_pred}")
    scale = float(np.median(gt[valid])) / med_pred
    return pred * scale, scale


def align_lstsq(pred: np.ndarray, gt: np.ndarray,
                mask: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Least-squares scale alignment (comparison mode)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = _joint_valid(pred, gt, mask)
    if not valid.any():
        raise DegenerateInputError("no jointly valid pixels for alignment")
    denom = float(np.sum(pred[valid] ** 2))
    if denom <= 0.0:
        raise DegenerateInputError("prediction is identically zero")
    scale = float(np.sum(pred[valid] * gt[valid])) / denom
    return pred * scale, scale


def compute_metrics(pred: np.ndarray, gt: np.ndarray,
                    mask: np.ndarray | None = None, *,
                    cap: float | None = None,
                    scale: float = 1.0) -> DepthMetrics:
    """Error metrics over the jointly valid pixels.

    abs_rel = mean |p-g| / g, rmse = sqrt(mean (p-g)^2), delta_i = fraction
    with max(p/g, g/p) < 1.25^i (strict). ``cap`` drops pixels whose ground
    truth exceeds the dataset limit; ``scale`` is recorded verbatim.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = _joint_valid(pred, gt, mask)
    if cap is not None:
        valid &= gt <= cap
    n = int(valid.sum())
    if n == 0:
        raise DegenerateInputError("no valid pixels to evaluate")
    p = pred[valid]
    g = gt[valid]
    abs_rel = float(np.mean(np.abs(p - g) / g))
    rmse = float(np.sqrt(np.mean((p - g) ** 2)))
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=abs_rel,
        rmse=rmse,
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        valid_count=n,
        scale=scale,
    )

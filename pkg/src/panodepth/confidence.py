"""Structure-aware confidence maps and the log-bias attention kernel.

The confidence map combines a gradient saliency prior (high where the image
carries structure), an edge-band prior forcing full confidence near view
borders (where cross-view overlap lives), and the validity mask. It is
injected into token attention as an additive log bias on the key axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, InvalidInputError
from .planner import normalized_gradient_z, sigmoid

CONF_FLOOR = 1e-4  # keeps log(conf) finite for masked-out pixels


@dataclass(frozen=True)
class ConfidenceMap:
    """Pixel-resolution confidence in [CONF_FLOOR, 1] plus its mean-pooled
    patch-resolution variant (token grid order, row-major)."""

    pixel: np.ndarray
    patch: np.ndarray
    grid_shape: tuple[int, int]


@dataclass(frozen=True)
class AttentionTensor:
    """Token-to-token attention for one view.

    ``weights`` is (T, T); ``grid_shape = (h_p, w_p)`` with T = h_p * w_p.
    ``normalized`` distinguishes row-stochastic maps from raw logits.
    """

    weights: np.ndarray
    grid_shape: tuple[int, int]
    normalized: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        t = self.grid_shape[0] * self.grid_shape[1]
        if w.shape != (t, t):
            raise InvalidInputError(
                f"attention shape {w.shape} does not match grid {self.grid_shape}")
        object.__setattr__(self, "weights", w)

    @property
    def tokens(self) -> int:
        return self.weights.shape[0]


def gradient_prior(view: np.ndarray, mask: np.ndarray, *,
                   tau_mode: str = "robust",
                   tau_const: float = 1.0) -> np.ndarray:
    """Gradient saliency prior M_g = sigmoid(+Z); complements uncertainty
    (M_g + U = 1 pixelwise)."""
    z = normalized_gradient_z(view, mask, tau_mode=tau_mode, tau_const=tau_const)
    return sigmoid(z)


def edge_band(size: int, margin: float) -> np.ndarray:
    """Binary border band: 1 where max(|x|, |y|) >= 1 - margin in normalized
    pixel-center coordinates (x, y) in [-1, 1]^2."""
    if not (0.0 < margin < 1.0):
        raise ConfigError(f"edge-band margin must be in (0, 1), got {margin}")
    coords = (np.arange(size, dtype=np.float64) + 0.5) / size * 2.0 - 1.0
    ax = np.abs(coords)
    band_1d = ax >= 1.0 - margin
    return (band_1d[:, None] | band_1d[None, :]).astype(np.float64)


def confidence_map(view: np.ndarray, mask: np.ndarray, *,
                   margin: float = 0.05,
                   patch: int = 14,
                   tau_mode: str = "robust",
                   tau_const: float = 1.0,
                   use_gradient: bool = True,
                   use_edge_band: bool = True,
                   use_validity: bool = True) -> ConfidenceMap:
    """Structure-aware confidence M_s = valid * [(1-E) * M_g + E], clamped
    to [CONF_FLOOR, 1], with a mean-pooled patch-grid variant.

    The ``use_*`` switches drop individual terms for ablation: a dropped
    gradient prior becomes 1, a dropped edge band becomes 0, a dropped
    validity mask becomes all-valid.
    """
    gray_shape = view.shape[:2]
    s = gray_shape[0]
    if gray_shape[0] != gray_shape[1]:
        raise InvalidInputError("confidence_map expects square views")
    if s % patch != 0:
        raise ConfigError(f"view size {s} is not a multiple of patch {patch}")
    if use_gradient:
        m_g = gradient_prior(view, mask, tau_mode=tau_mode, tau_const=tau_const)
    else:
        m_g = np.ones((s, s), dtype=np.float64)
    e = edge_band(s, margin) if use_edge_band else np.zeros((s, s))
    valid = np.asarray(mask, dtype=np.float64) if use_validity \
        else np.ones((s, s), dtype=np.float64)
    m_s = valid * ((1.0 - e) * m_g + e)
    m_s = np.clip(m_s, CONF_FLOOR, 1.0)
    grid = (s // patch, s // patch)
    pooled = m_s.reshape(grid[0], patch, grid[1], patch).mean(axis=(1, 3))
    return ConfidenceMap(pixel=m_s, patch=pooled, grid_shape=grid)


def biased_softmax_attention(logits: np.ndarray, conf: np.ndarray,
                             grid_shape: tuple[int, int]) -> AttentionTensor:
    """Row-stochastic attention from raw scores plus a key-side log bias.

    Row i = softmax(logits[i, :] + log(conf)); ``conf`` has one entry per
    key token in [CONF_FLOOR, 1].
    """
    logits = np.asarray(logits, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64).reshape(-1)
    t = conf.shape[0]
    if logits.shape != (t, t):
        raise InvalidInputError(
            f"logits shape {logits.shape} does not match {t} key confidences")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("attention logits must be finite")
    if np.any(conf <= 0.0) or np.any(conf > 1.0 + 1e-12):
        raise InvalidInputError("key confidences must lie in (0, 1]")
    biased = logits + np.log(conf)[None, :]
    biased = biased - biased.max(axis=1, keepdims=True)
    ex = np.exp(biased)
    rows = ex / ex.sum(axis=1, keepdims=True)
    return AttentionTensor(weights=rows, grid_shape=grid_shape, normalized=True)


def plain_softmax_attention(logits: np.ndarray,
                            grid_shape: tuple[int, int]) -> AttentionTensor:
    """Unbiased softmax attention (conf identically 1)."""
    t = np.asarray(logits).shape[0]
    return biased_softmax_attention(logits, np.ones(t), grid_shape)


def require_row_stochastic(attn: AttentionTensor, atol: float = 1e-6) -> None:
    """Raise unless every row is a probability distribution within atol."""
    w = attn.weights
    if np.any(w < -1e-15):
        raise DegenerateInputError("attention has negative entries")
    err = np.max(np.abs(w.sum(axis=1) - 1.0))
    if err > atol:
        raise DegenerateInputError(
            f"attention rows deviate from stochastic by {err:.3g}")

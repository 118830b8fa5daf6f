"""Fusing aesthetic and technical scores into one overall score."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import DoverError
from .metrics import srocc

DEFAULT_W_A = 0.428
DEFAULT_W_T = 0.572


class DegenerateFitError(DoverError, ValueError):
    """Fusion weights cannot be identified from the given scores."""


@dataclass(frozen=True)
class FusionWeights:
    w_a: float = DEFAULT_W_A
    w_t: float = DEFAULT_W_T

    def __post_init__(self):
        if not (0.0 <= self.w_a <= 1.0 and 0.0 <= self.w_t <= 1.0):
            raise ValueError("fusion weights must lie in [0, 1]")
        if abs(self.w_a + self.w_t - 1.0) > 1e-9:
            raise ValueError(f"fusion weights must sum to 1, got {self.w_a} + {self.w_t}")

    @classmethod
    def from_w_a(cls, w_a: float) -> "FusionWeights":
        return cls(float(w_a), 1.0 - float(w_a))


def fuse(q_a, q_t, w: FusionWeights | None = None):
    """Weighted sum w_a * q_a + w_t * q_t (scalars or aligned arrays)."""
    w = w or FusionWeights()
    out = w.w_a * np.asarray(q_a, dtype=np.float64) + w.w_t * np.asarray(q_t, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


def personalized_fuse(q_a, q_t, technical_impact: float):
    """Blend with a rater-specific proportion of technical impact in [0, 1]."""
    if not 0.0 <= technical_impact <= 1.0:
        raise ValueError("technical_impact must lie in [0, 1]")
    return fuse(q_a, q_t, FusionWeights(1.0 - technical_impact, technical_impact))


@dataclass
class FusionFit:
    weights: FusionWeights
    ols_coef: tuple[float, float]
    intercept: float
    grid_w_a: float
    grid_srocc: float
    diagnostics: dict = field(default_factory=dict)


def fit_fusion_weight(mos_a, mos_t, mos, grid_step: float = 0.001) -> FusionFit:
    """Fit overall MOS as a convex blend of the two perspective MOS.

    Primary estimate: least squares of ``mos`` on (1, mos_a, mos_t), negative
    coefficients clamped to 0, then rescaled to sum to 1. Diagnostic: the
    w_a on a grid over [0, 1] that maximizes SROCC of the blend with ``mos``.
    """
    a = np.asarray(mos_a, dtype=np.float64).ravel()
    t = np.asarray(mos_t, dtype=np.float64).ravel()
    y = np.asarray(mos, dtype=np.float64).ravel()
    if not (a.size == t.size == y.size):
        raise ValueError("mos_a, mos_t and mos must be aligned")
    if a.size < 3:
        raise ValueError("fitting needs at least 3 videos")
    X = np.column_stack([np.ones_like(a), a, t])
    if np.linalg.matrix_rank(X) < 3:
        raise DegenerateFitError("perspective scores are constant or collinear")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    intercept, ca, ct = (float(c) for c in coef)
    ca_c, ct_c = max(ca, 0.0), max(ct, 0.0)
    if ca_c + ct_c == 0:
        raise DegenerateFitError("both least-squares coefficients are non-positive")
    w_a = ca_c / (ca_c + ct_c)

    grid = np.round(np.arange(0.0, 1.0 + grid_step / 2, grid_step), 12)
    best_w, best_r = 0.0, -np.inf
    for g in grid:
        blend = g * a + (1.0 - g) * t
        if np.all(blend == blend[0]):
            continue
        r = srocc(blend, y)
        if r > best_r:
            best_w, best_r = float(g), r
    return FusionFit(
        FusionWeights.from_w_a(w_a),
        (ca, ct),
        intercept,
        best_w,
        float(best_r),
        {"n": int(a.size), "residual_std": float(np.std(y - X @ coef))},
    )

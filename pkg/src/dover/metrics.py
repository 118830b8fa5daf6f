"""Correlation statistics between predictions and opinions."""
from __future__ import annotations

import numpy as np
from scipy import stats

from . import DoverError


class UndefinedCorrelationError(DoverError, ValueError):
    """Correlation requested for an input with zero variance."""


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("correlation needs at least 2 paired values")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("scores must be finite")
    for name, v in (("x", x), ("y", y)):
        if np.all(v == v[0]):
            raise UndefinedCorrelationError(f"{name} is constant; correlation is undefined")
    return x, y


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    a = x - x.mean()
    b = y - y.mean()
    r = float(a @ b / np.sqrt((a @ a) * (b @ b)))
    return max(-1.0, min(1.0, r))


def plcc(x, y) -> float:
    """Pearson linear correlation (no nonlinear remapping)."""
    return _pearson(*_pair(x, y))


def srocc(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of mid-ranks."""
    x, y = _pair(x, y)
    return _pearson(stats.rankdata(x), stats.rankdata(y))


def krocc(x, y) -> float:
    """Kendall tau-b (tie-corrected)."""
    x, y = _pair(x, y)
    return float(stats.kendalltau(x, y, variant="b").statistic)


def correlations(pred, label) -> dict[str, float]:
    return {"SROCC": srocc(pred, label), "PLCC": plcc(pred, label), "KROCC": krocc(pred, label)}

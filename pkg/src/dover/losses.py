"""Training objectives with analytic gradients.

All losses return a :class:`LossResult` whose ``grads`` maps each input name
to an array of the input's shape. ``flat_grads()`` concatenates them in input
order.

The relative loss combines a linear-correlation term and a pairwise hinge
rank term::

    rel(p, y) = (1 - plcc(p, y)) / 2 + rank_weight * mean_{y_i > y_j} max(0, p_j - p_i)
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import DoverError


class ZeroNormError(DoverError, ValueError):
    """Cosine similarity requested for a zero vector."""


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_cr: float = 0.3
    lambda_lvbs: float = 0.5
    rank_weight: float = 0.3

    def __post_init__(self):
        if min(self.lambda_cr, self.lambda_lvbs, self.rank_weight) < 0:
            raise ValueError("objective weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossResult:
    value: float
    grads: dict[str, np.ndarray]
    info: dict[str, Any] = field(default_factory=dict)

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([np.ravel(g) for g in self.grads.values()])

    def __add__(self, other: "LossResult") -> "LossResult":
        return _combine([(1.0, self), (1.0, other)])


def _combine(terms: list[tuple[float, LossResult]], info: dict | None = None) -> LossResult:
    value = 0.0
    grads: dict[str, np.ndarray] = {}
    for weight, term in terms:
        value += weight * term.value
        for name, g in term.grads.items():
            grads[name] = grads[name] + weight * g if name in grads else weight * g
    return LossResult(float(value), grads, dict(info or {}))


def _vec(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError(f"{name} needs at least 2 entries")
    return x


def plcc_loss(preds, labels, name: str = "preds") -> LossResult:
    """(1 - PLCC) / 2 and its gradient w.r.t. ``preds``.

    Constant predictions have no defined correlation; the result is then 0.5
    with a zero gradient and ``info['degenerate'] = True``.
    """
    p = _vec(preds, "preds")
    y = _vec(labels, "labels")
    if p.shape != y.shape:
        raise ValueError("preds and labels must have equal length")
    b = y - y.mean()
    nb = np.sqrt(b @ b)
    if nb == 0:
        raise ValueError("labels are constant")
    a = p - p.mean()
    na = np.sqrt(a @ a)
    if na == 0:
        return LossResult(0.5, {name: np.zeros_like(p)}, {"degenerate": True, "plcc": float("nan")})
    rho = float(a @ b / (na * nb))
    drho = b / (na * nb) - rho * a / (na * na)
    return LossResult((1.0 - rho) / 2.0, {name: -0.5 * drho}, {"degenerate": False, "plcc": rho})


def rank_loss(preds, labels, name: str = "preds") -> LossResult:
    """Mean hinge over ordered pairs with labels_i > labels_j of max(0, preds_j - preds_i)."""
    p = _vec(preds, "preds")
    y = _vec(labels, "labels")
    if p.shape != y.shape:
        raise ValueError("preds and labels must have equal length")
    strict = y[:, None] > y[None, :]  # [i, j]: label i above label j
    n_pairs = int(strict.sum())
    if n_pairs == 0:
        return LossResult(0.0, {name: np.zeros_like(p)}, {"pairs": 0})
    gap = p[None, :] - p[:, None]  # p_j - p_i
    active = strict & (gap > 0)
    value = float(np.where(active, gap, 0.0).sum() / n_pairs)
    # d gap_ij / d p_j = +1, d gap_ij / d p_i = -1
    grad = (active.sum(axis=0) - active.sum(axis=1)) / n_pairs
    return LossResult(value, {name: grad.astype(np.float64)}, {"pairs": n_pairs})


def relative_loss(preds, labels, cfg: ObjectiveConfig | None = None, name: str = "preds") -> LossResult:
    cfg = cfg or ObjectiveConfig()
    lin = plcc_loss(preds, labels, name)
    terms = [(1.0, lin)]
    if cfg.rank_weight:
        terms.append((cfg.rank_weight, rank_loss(preds, labels, name)))
    return _combine(terms, {"degenerate": lin.info["degenerate"]})


def cross_scale_loss(f_a, f_a_down) -> LossResult:
    """1 - cosine similarity between features of the two aesthetic scales."""
    x = np.asarray(f_a, dtype=np.float64).ravel()
    y = np.asarray(f_a_down, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 1:
        raise ValueError("feature vectors must have equal, positive dimension")
    nx, ny = np.sqrt(x @ x), np.sqrt(y @ y)
    if nx == 0 or ny == 0:
        raise ZeroNormError("cross-scale loss is undefined for a zero feature vector")
    cos = float(x @ y / (nx * ny))
    gx = -(y / (nx * ny) - cos * x / (nx * nx))
    gy = -(x / (nx * ny) - cos * y / (ny * ny))
    return LossResult(1.0 - cos, {"f_a": gx, "f_a_down": gy}, {"cos": cos})


def batch_cross_scale_loss(f_a, f_a_down) -> LossResult:
    """Cross-scale loss averaged over a batch of (B, D) feature rows."""
    fa = np.atleast_2d(np.asarray(f_a, dtype=np.float64))
    fd = np.atleast_2d(np.asarray(f_a_down, dtype=np.float64))
    if fa.shape != fd.shape:
        raise ValueError("feature batches must have equal shape")
    b = fa.shape[0]
    gx, gy = np.empty_like(fa), np.empty_like(fd)
    total = 0.0
    for i in range(b):
        r = cross_scale_loss(fa[i], fd[i])
        total += r.value
        gx[i], gy[i] = r.grads["f_a"] / b, r.grads["f_a_down"] / b
    return LossResult(total / b, {"f_a": gx, "f_a_down": gy})


def _check_batch(*vs):
    n = {np.asarray(v).shape[0] for v in vs}
    if len(n) != 1:
        raise ValueError("batch inputs are not aligned")


def lvbs_objective(q_a, q_t, mos, f_a, f_a_down, cfg: ObjectiveConfig | None = None) -> LossResult:
    """Both branches regressed on overall MOS, plus the cross-scale restraint."""
    cfg = cfg or ObjectiveConfig()
    _check_batch(q_a, q_t, mos, f_a, f_a_down)
    rel_a = relative_loss(q_a, mos, cfg, "q_a")
    rel_t = relative_loss(q_t, mos, cfg, "q_t")
    cr = batch_cross_scale_loss(f_a, f_a_down)
    out = _combine([(1.0, rel_a), (1.0, rel_t), (cfg.lambda_cr, cr)])
    out.grads = {k: out.grads[k] for k in ("q_a", "q_t", "f_a", "f_a_down")}
    out.info = {"rel_a": rel_a.value, "rel_t": rel_t.value, "cr": cr.value}
    return out


def ds_objective(q_a, q_t, mos_a, mos_t, cfg: ObjectiveConfig | None = None) -> LossResult:
    """Each branch regressed on its own perspective MOS."""
    cfg = cfg or ObjectiveConfig()
    _check_batch(q_a, q_t, mos_a, mos_t)
    rel_a = relative_loss(q_a, mos_a, cfg, "q_a")
    rel_t = relative_loss(q_t, mos_t, cfg, "q_t")
    out = _combine([(1.0, rel_a), (1.0, rel_t)])
    out.info = {"rel_a": rel_a.value, "rel_t": rel_t.value}
    return out


def doverpp_objective(q_a, q_t, mos, mos_a, mos_t, f_a, f_a_down,
                      cfg: ObjectiveConfig | None = None) -> LossResult:
    """Direct supervision plus ``lambda_lvbs`` times the LVBS objective."""
    cfg = cfg or ObjectiveConfig()
    ds = ds_objective(q_a, q_t, mos_a, mos_t, cfg)
    lv = lvbs_objective(q_a, q_t, mos, f_a, f_a_down, cfg)
    out = _combine([(1.0, ds), (cfg.lambda_lvbs, lv)])
    out.grads = {k: out.grads[k] for k in ("q_a", "q_t", "f_a", "f_a_down")}
    out.info = {"ds": ds.value, "lvbs": lv.value, **{f"lvbs_{k}": v for k, v in lv.info.items()}}
    return out

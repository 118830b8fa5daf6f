"""Index features per video and histogram-matched subset selection.

The three indices are cheap proxies: spatial detail (mean absolute
Laplacian of luma), motion (mean absolute frame difference of luma) and
colorfulness/content variety (entropy of a 64-bin color histogram).
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import astuple, dataclass

import numpy as np

from ._io import read_csv, write_csv
from .rng import keyed_rng
from .video import Video

DIMENSIONS = ("spatial", "temporal", "semantic")
INDEX_HEADER = ["video_id", *DIMENSIONS]
IPF_MAX_ITER = 50
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class IndexVector:
    spatial: float
    temporal: float
    semantic: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in astuple(self)):
            raise ValueError("index values must be finite")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self))


def luma(frames: np.ndarray) -> np.ndarray:
    """(T, H, W) luma using BT.601 weights; gray frames pass through."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] == 1:
        return frames[..., 0]
    return frames @ LUMA


def spatial_index(y: np.ndarray) -> float:
    """Mean |4-neighbour Laplacian| over interior pixels of every frame."""
    if y.shape[1] < 3 or y.shape[2] < 3:
        return 0.0
    c = y[:, 1:-1, 1:-1]
    lap = y[:, :-2, 1:-1] + y[:, 2:, 1:-1] + y[:, 1:-1, :-2] + y[:, 1:-1, 2:] - 4.0 * c
    return float(np.mean(np.abs(lap)))


def temporal_index(y: np.ndarray) -> float:
    if y.shape[0] < 2:
        return 0.0
    return float(np.mean(np.abs(np.diff(y, axis=0))))


def color_bins(frames: np.ndarray) -> np.ndarray:
    """(T, H, W) bin ids in [0, 64): 4 levels per RGB channel, or 64 gray levels."""
    if frames.shape[-1] == 1:
        return np.minimum((frames[..., 0] * 64).astype(np.int64), 63)
    q = np.minimum((frames * 4).astype(np.int64), 3)
    return q[..., 0] * 16 + q[..., 1] * 4 + q[..., 2]


def semantic_index(frames: np.ndarray) -> float:
    """Mean per-frame Shannon entropy (bits) of the 64-bin color histogram."""
    ids = color_bins(frames)
    total = 0.0
    for f in ids:
        p = np.bincount(f.ravel(), minlength=64) / f.size
        p = p[p > 0]
        total += float(-(p * np.log2(p)).sum())
    # entropy of a single occupied bin is -1*log2(1) = -0.0; normalize the sign
    return total / len(ids) + 0.0


def compute_indices(v: Video) -> IndexVector:
    y = luma(v.frames)
    return IndexVector(spatial_index(y), temporal_index(y), semantic_index(v.frames))


# -------------------------------------------------------------------- selection


def bin_ids(values: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width bins over the observed range of each column; (n, d) int array."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(axis=0), values.max(axis=0)
    width = np.where(hi > lo, hi - lo, 1.0)
    ids = np.floor((values - lo) / width * bins).astype(np.int64)
    return np.clip(ids, 0, bins - 1)


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integers proportional to ``weights`` summing to ``total``; ties go to lower index."""
    weights = np.asarray(weights, dtype=np.float64)
    exact = weights / weights.sum() * total
    out = np.floor(exact).astype(np.int64)
    short = total - int(out.sum())
    order = np.argsort(-(exact - out), kind="stable")
    out[order[:short]] += 1
    return out


def marginal_emd(all_ids: np.ndarray, subset: Sequence[int], bins: int) -> np.ndarray:
    """Per-dimension 1-D earth mover's distance between normalized marginals.

    Bins are unit-spaced on a [0, 1] axis (width 1 / bins), so the distance
    is sum_b |CDF_subset(b) - CDF_pool(b)| / bins.
    """
    sub = all_ids[np.asarray(subset, dtype=np.int64)]
    out = []
    for d in range(all_ids.shape[1]):
        p = np.bincount(all_ids[:, d], minlength=bins) / len(all_ids)
        q = np.bincount(sub[:, d], minlength=bins) / len(sub)
        out.append(float(np.abs(np.cumsum(q) - np.cumsum(p)).sum() / bins))
    return np.array(out)


def _ipf(cells: np.ndarray, caps: np.ndarray, quotas: list[np.ndarray], k: int) -> np.ndarray:
    """Real-valued per-cell targets matching each marginal quota, capped by cell size."""
    x = caps * (k / caps.sum())
    for _ in range(IPF_MAX_ITER):
        for d, q in enumerate(quotas):
            sums = np.bincount(cells[:, d], weights=x, minlength=len(q))
            scale = np.divide(q, sums, out=np.zeros_like(sums), where=sums > 0)
            x = np.minimum(x * scale[cells[:, d]], caps)
        err = max(np.abs(np.bincount(cells[:, d], weights=x, minlength=len(q)) - q).max()
                  for d, q in enumerate(quotas))
        if err < 1e-9:
            break
    return x


@dataclass
class Subset:
    indices: list[int]
    emd: np.ndarray
    quotas: list[list[int]]


def histogram_matched_subset(pool, k: int, bins: int = 10, seed: int = 0) -> Subset:
    """Pick ``k`` pool items whose per-dimension histograms match the pool's.

    Per-bin quotas come from largest-remainder rounding of k times the pool
    marginal. Joint-cell targets are found by iterative proportional fitting
    on the three marginals, floored and drawn uniformly within each cell; the
    remaining picks greedily go to the cell whose bins are furthest below
    quota. Returned indices are sorted.
    """
    values = _as_matrix(pool)
    n = len(values)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if bins < 2:
        raise ValueError("bins must be at least 2")
    rng = keyed_rng(seed, "histogram-matched-subset")
    ids = bin_ids(values, bins)
    quotas = [largest_remainder(np.bincount(ids[:, d], minlength=bins), k) for d in range(ids.shape[1])]

    cells, cell_of = np.unique(ids, axis=0, return_inverse=True)
    cell_of = cell_of.ravel()
    members = [np.flatnonzero(cell_of == c) for c in range(len(cells))]
    caps = np.array([len(m) for m in members], dtype=np.float64)
    target = np.floor(_ipf(cells, caps, quotas, k) + 1e-9).astype(np.int64)

    chosen = np.zeros(n, dtype=bool)
    for c, m in enumerate(members):
        if target[c]:
            chosen[rng.choice(m, size=int(target[c]), replace=False)] = True

    filled = [np.bincount(ids[chosen, d], minlength=bins) for d in range(ids.shape[1])]
    left = caps.astype(np.int64) - target
    tiebreak = rng.random(len(cells))
    for _ in range(k - int(chosen.sum())):
        deficit = sum((quotas[d] - filled[d])[cells[:, d]] for d in range(ids.shape[1]))
        score = np.where(left > 0, deficit + tiebreak * 1e-3, -np.inf)
        c = int(np.argmax(score))
        free = members[c][~chosen[members[c]]]
        pick = int(rng.choice(free))
        chosen[pick] = True
        left[c] -= 1
        for d in range(ids.shape[1]):
            filled[d][cells[c, d]] += 1

    indices = np.flatnonzero(chosen).tolist()
    return Subset(indices, marginal_emd(ids, indices, bins), [q.tolist() for q in quotas])


def uniform_subset(n: int, k: int, seed: int = 0) -> list[int]:
    """Baseline: ``k`` distinct indices drawn uniformly."""
    return sorted(keyed_rng(seed, "uniform-subset").choice(n, size=k, replace=False).tolist())


def _as_matrix(pool) -> np.ndarray:
    if len(pool) == 0:
        raise ValueError("pool is empty")
    if isinstance(pool[0], IndexVector):
        return np.stack([p.as_array() for p in pool])
    values = np.asarray(pool, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("pool must be a list of IndexVector or an (n, d) array")
    return values


# ------------------------------------------------------------------------- CSV


def write_indices(path, ids: Sequence[str], vectors: Sequence[IndexVector]):
    return write_csv(path, INDEX_HEADER, ([vid, *astuple(v)] for vid, v in zip(ids, vectors)))


def read_indices(path) -> tuple[list[str], list[IndexVector]]:
    rows = read_csv(path)
    if rows and any(c not in rows[0] for c in INDEX_HEADER):
        raise ValueError(f"{path}: expected columns {INDEX_HEADER}")
    return ([r["video_id"] for r in rows],
            [IndexVector(float(r["spatial"]), float(r["temporal"]), float(r["semantic"])) for r in rows])

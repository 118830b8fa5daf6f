"""A tiny two-branch evaluator with a hand-written backward pass.

Each branch maps a view (T, H, W, C) to a feature vector and a scalar score::

    x0 = 4 (x - 1/2)             fixed centering of [0, 1] pixels
    z1 = conv3d(x0, W1) + b1     3x3x3 kernel, stride (1, 2, 2), zero padding 1
    a1 = silu(z1)
    z2 = conv3d(a1, W2) + b2     same geometry
    a2 = silu(z2)
    g  = mean_{t,h,w} a2         global average pool, (C2,)
    F  = g @ Wp + bp             feature, (D,)
    Q  = F @ wh + bh             score

All parameters of a branch live in one flat float64 vector; :func:`branch_layout`
gives the order and shapes of the blocks inside it.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import DoverError
from ._io import atomic_write_bytes
from .fusion import FusionWeights
from .rng import keyed_rng
from .views import ViewConfig, ViewTensor

KERNEL = 3
STRIDE = 2
CHECKPOINT_MAGIC = b"DOVERCKP"
INPUT_SCALE = 4.0


class ShapeError(DoverError, ValueError):
    """Input or upstream gradient does not match the model's declared shape."""


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _silu_grad(z, s):
    return s * (1.0 + z * (1.0 - s))


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x (B, T, H, W, Cin), w (3, 3, 3, Cin, Cout) -> (B, T, Ho, Wo, Cout), im2col buffer."""
    bsz, t, h, wd, cin = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (KERNEL, KERNEL, KERNEL), axis=(1, 2, 3))[:, :, ::STRIDE, ::STRIDE]
    ho, wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 3, 5, 6, 7, 4)).reshape(-1, KERNEL**3 * cin)
    out = cols @ w.reshape(KERNEL**3 * cin, -1) + b
    return out.reshape(bsz, t, ho, wo, -1), cols


def conv3d_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape, need_dx: bool = True):
    """Gradients of conv3d_forward w.r.t. (x, w, b); dx is None when not needed."""
    bsz, t, h, wd, cin = x_shape
    cout = w.shape[-1]
    d = dout.reshape(-1, cout)
    dw = (cols.T @ d).reshape(w.shape)
    db = d.sum(axis=0)
    if not need_dx:
        return None, dw, db
    ho, wo = dout.shape[2], dout.shape[3]
    wk = w.reshape(KERNEL, KERNEL, KERNEL, cin, cout)
    dxp = np.zeros((bsz, t + 2, h + 2, wd + 2, cin))
    for i in range(KERNEL):
        for j in range(KERNEL):
            for k in range(KERNEL):
                # one contiguous matmul per kernel offset, scattered back with the stride
                dc = (d @ wk[i, j, k].T).reshape(bsz, t, ho, wo, cin)
                dxp[:, i:i + t, j:j + STRIDE * ho:STRIDE, k:k + STRIDE * wo:STRIDE] += dc
    return dxp[:, 1:-1, 1:-1, 1:-1], dw, db


def branch_layout(in_channels: int, c1: int, c2: int, feat_dim: int) -> list[tuple[str, tuple[int, ...]]]:
    k = KERNEL
    return [
        ("conv1.weight", (k, k, k, in_channels, c1)),
        ("conv1.bias", (c1,)),
        ("conv2.weight", (k, k, k, c1, c2)),
        ("conv2.bias", (c2,)),
        ("proj.weight", (c2, feat_dim)),
        ("proj.bias", (feat_dim,)),
        ("head.weight", (feat_dim,)),
        ("head.bias", (1,)),
    ]


@dataclass
class BranchCache:
    x_shape: tuple
    cols1: np.ndarray
    z1: np.ndarray
    s1: np.ndarray
    a1_shape: tuple
    cols2: np.ndarray
    z2: np.ndarray
    s2: np.ndarray
    pooled: np.ndarray
    features: np.ndarray


class BranchModel:
    """One branch. ``params`` is the flat parameter vector (owned, float64)."""

    input_scale = INPUT_SCALE

    def __init__(self, in_channels: int = 3, c1: int = 8, c2: int = 16, feat_dim: int = 64,
                 params: np.ndarray | None = None):
        self.in_channels, self.c1, self.c2, self.feat_dim = in_channels, c1, c2, feat_dim
        self.layout = branch_layout(in_channels, c1, c2, feat_dim)
        n = sum(int(np.prod(shape)) for _, shape in self.layout)
        if params is None:
            params = np.zeros(n)
        params = np.array(params, dtype=np.float64).ravel()
        if params.size != n:
            raise ShapeError(f"expected {n} parameters, got {params.size}")
        self.params = params

    @classmethod
    def initialized(cls, seed: int, **dims) -> "BranchModel":
        """Uniform(-s, s) init with s = 1/sqrt(fan_in) per block, seeded."""
        m = cls(**dims)
        fan_in = {
            "conv1": KERNEL**3 * m.in_channels,
            "conv2": KERNEL**3 * m.c1,
            "proj": m.c2,
            "head": m.feat_dim,
        }
        for name, view in m.blocks().items():
            s = 1.0 / np.sqrt(fan_in[name.split(".")[0]])
            view[...] = keyed_rng(seed, "init", name).uniform(-s, s, size=view.shape)
        return m

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def dims(self) -> dict[str, int]:
        return {"in_channels": self.in_channels, "c1": self.c1, "c2": self.c2, "feat_dim": self.feat_dim}

    def blocks(self, flat: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Named reshaped views into ``flat`` (default: the parameters)."""
        flat = self.params if flat is None else flat
        out, pos = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = flat[pos:pos + size].reshape(shape)
            pos += size
        return out

    def copy(self) -> "BranchModel":
        return BranchModel(**self.dims, params=self.params.copy())

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 5 or x.shape[-1] != self.in_channels or min(x.shape[1:4]) < 1:
            raise ShapeError(f"expected (B, T, H, W, {self.in_channels}) input, got {x.shape}")
        return x

    def forward_batch(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, BranchCache]:
        """Features (B, D), scores (B,) and the cache needed by :meth:`backward_batch`."""
        x = (self._check_input(x) - 0.5) * self.input_scale
        p = self.blocks()
        z1, cols1 = conv3d_forward(x, p["conv1.weight"], p["conv1.bias"])
        a1, s1 = _silu(z1)
        z2, cols2 = conv3d_forward(a1, p["conv2.weight"], p["conv2.bias"])
        a2, s2 = _silu(z2)
        pooled = a2.mean(axis=(1, 2, 3))
        feats = pooled @ p["proj.weight"] + p["proj.bias"]
        scores = feats @ p["head.weight"] + p["head.bias"][0]
        cache = BranchCache(x.shape, cols1, z1, s1, a1.shape, cols2, z2, s2, pooled, feats)
        return feats, scores, cache

    def backward_batch(self, cache: BranchCache, d_features, d_scores) -> np.ndarray:
        """Flat parameter gradient of sum_b (d_features[b] . F_b + d_scores[b] * Q_b)."""
        bsz = cache.features.shape[0]
        d_features = np.asarray(d_features, dtype=np.float64)
        d_scores = np.asarray(d_scores, dtype=np.float64).ravel()
        if d_features.shape != cache.features.shape or d_scores.shape != (bsz,):
            raise ShapeError(
                f"upstream shapes {d_features.shape}, {d_scores.shape} do not match "
                f"{cache.features.shape}, {(bsz,)}"
            )
        p = self.blocks()
        grad = np.zeros_like(self.params)
        g = self.blocks(grad)
        g["head.weight"][...] = d_scores @ cache.features
        g["head.bias"][...] = d_scores.sum()
        d_f = d_features + d_scores[:, None] * p["head.weight"][None, :]
        g["proj.weight"][...] = cache.pooled.T @ d_f
        g["proj.bias"][...] = d_f.sum(axis=0)
        d_pooled = d_f @ p["proj.weight"].T
        n_pool = np.prod(cache.z2.shape[1:4])
        d_z2 = (d_pooled[:, None, None, None, :] / n_pool) * _silu_grad(cache.z2, cache.s2)
        d_a1, g["conv2.weight"][...], g["conv2.bias"][...] = conv3d_backward(
            d_z2, cache.cols2, p["conv2.weight"], cache.a1_shape)
        d_z1 = d_a1 * _silu_grad(cache.z1, cache.s1)
        _, g["conv1.weight"][...], g["conv1.bias"][...] = conv3d_backward(
            d_z1, cache.cols1, p["conv1.weight"], cache.x_shape, need_dx=False)
        return grad


def _as_array(view) -> np.ndarray:
    return view.data if isinstance(view, ViewTensor) else np.asarray(view, dtype=np.float64)


def forward(m: BranchModel, view) -> tuple[np.ndarray, float]:
    """(feature, score) for a single view (T, H, W, C)."""
    feats, scores, _ = m.forward_batch(_as_array(view)[None])
    return feats[0], float(scores[0])


def backward(m: BranchModel, view, upstream) -> np.ndarray:
    """Parameter gradient for one view given (d_feature, d_score)."""
    d_feat, d_score = upstream
    _, _, cache = m.forward_batch(_as_array(view)[None])
    d_feat = np.asarray(d_feat, dtype=np.float64)
    if d_feat.shape != (m.feat_dim,):
        raise ShapeError(f"d_feature must have shape ({m.feat_dim},), got {d_feat.shape}")
    return m.backward_batch(cache, d_feat[None], np.array([float(d_score)]))


@dataclass
class DoverModel:
    aesthetic: BranchModel
    technical: BranchModel
    view_cfg: ViewConfig = field(default_factory=ViewConfig)
    fusion: FusionWeights = field(default_factory=FusionWeights)
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def initialized(cls, seed: int, view_cfg: ViewConfig | None = None, **dims) -> "DoverModel":
        return cls(
            BranchModel.initialized(keyed_rng(seed, "aesthetic").integers(2**62), **dims),
            BranchModel.initialized(keyed_rng(seed, "technical").integers(2**62), **dims),
            view_cfg or ViewConfig(),
        )

    def branches(self) -> dict[str, BranchModel]:
        return {"aesthetic": self.aesthetic, "technical": self.technical}


def save_checkpoint(model: DoverModel, path: str | Path) -> Path:
    """Magic, uint64 LE header length, JSON header, then little-endian float64 parameters."""
    path = Path(path)
    offset = 0
    branches = {}
    for name, b in model.branches().items():
        branches[name] = {**b.dims, "n_params": b.n_params, "offset": offset,
                          "layout": [[n, list(s)] for n, s in b.layout]}
        offset += b.n_params
    header = {
        "format": "dover-checkpoint",
        "version": 1,
        "dtype": "<f8",
        "branches": branches,
        "view_config": model.view_cfg.to_dict(),
        "fusion": {"w_a": model.fusion.w_a, "w_t": model.fusion.w_t},
        "meta": model.meta,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = np.concatenate([model.aesthetic.params, model.technical.params]).astype("<f8").tobytes()
    atomic_write_bytes(path, CHECKPOINT_MAGIC + struct.pack("<Q", len(head)) + head + blob)
    return path


def load_checkpoint(path: str | Path) -> DoverModel:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise DoverError(f"not a model checkpoint: {path}")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode("utf-8"))
    blob = np.frombuffer(raw[16 + n:], dtype="<f8")
    branches = {}
    for name in ("aesthetic", "technical"):
        spec = header["branches"][name]
        dims = {k: spec[k] for k in ("in_channels", "c1", "c2", "feat_dim")}
        params = blob[spec["offset"]:spec["offset"] + spec["n_params"]].astype(np.float64)
        branches[name] = BranchModel(**dims, params=params)
    return DoverModel(
        branches["aesthetic"],
        branches["technical"],
        ViewConfig.from_dict(header["view_config"]),
        FusionWeights(**header["fusion"]),
        header.get("meta", {}),
    )

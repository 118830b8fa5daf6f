"""View decomposition: aesthetic views and technical fragments.

The aesthetic view keeps the whole frame (composition and semantics) at low
resolution on a sparse set of frames. The technical view keeps native-
resolution patches, one per grid cell, stitched in grid order on a clip of
continuous frames, which retains distortions while breaking composition.
"""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from ._io import atomic_write_bytes, write_json
from .resize import resize_frames
from .rng import SeedLike, as_generator, keyed_rng, root_seed
from .video import Video, to_uint8

KINDS = ("aesthetic", "aesthetic_over", "technical")


@dataclass(frozen=True)
class ViewConfig:
    aes_size: int = 224
    aes_over_size: int = 128
    aes_frames: int = 32
    frag_grid: int = 7
    frag_patch: int = 32
    tech_clip_len: int = 32
    tech_clips_infer: int = 3
    mode: str = "train"
    seed: int = 0

    def __post_init__(self):
        counts = (self.aes_size, self.aes_over_size, self.aes_frames, self.frag_grid,
                  self.frag_patch, self.tech_clip_len, self.tech_clips_infer)
        if any(int(n) != n or n < 1 for n in counts):
            raise ValueError("all view sizes and counts must be positive integers")
        if self.aes_over_size >= self.aes_size:
            raise ValueError("aes_over_size must be smaller than aes_size")
        if self.mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {self.mode!r}")

    @property
    def tech_size(self) -> int:
        return self.frag_grid * self.frag_patch

    def with_mode(self, mode: str) -> "ViewConfig":
        return replace(self, mode=mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ViewConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ViewTensor:
    data: np.ndarray
    kind: str
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown view kind {self.kind!r}")
        self.data.setflags(write=False)

    @property
    def shape(self):
        return self.data.shape


def sparse_frame_indices(T: int, N: int, mode: str = "infer", rng: SeedLike = None) -> list[int]:
    """Pick one frame from each of N equal segments [floor(jT/N), floor((j+1)T/N)).

    Infer mode takes the segment midpoint floor((lo + hi) / 2); train mode a
    uniform index within the segment. Empty segments (T < N) reuse their
    lower bound, so short videos repeat frames in order.
    """
    if T < 1 or N < 1:
        raise ValueError("T and N must be positive")
    gen = as_generator(rng, 0) if mode == "train" else None
    out = []
    for j in range(N):
        lo, hi = (j * T) // N, ((j + 1) * T) // N
        if hi <= lo:
            idx = min(lo, T - 1)
        elif mode == "train":
            idx = int(gen.integers(lo, hi))
        else:
            idx = (lo + hi) // 2
        out.append(idx)
    return out


def _resized_aesthetic(v: Video, indices: list[int], size: int, kind: str) -> ViewTensor:
    frames = v.frames[np.asarray(indices)]
    data = np.clip(resize_frames(frames, size, size, "bicubic"), 0.0, 1.0)
    prov = {
        "video_id": v.id,
        "frame_indices": list(indices),
        "source_shape": [v.height, v.width],
        "size": size,
        "scale_ratio": [v.height / size, v.width / size],
    }
    return ViewTensor(data, kind, prov)


def aesthetic_view(v: Video, cfg: ViewConfig, rng: SeedLike = None) -> ViewTensor:
    """Sparse frames resized (full frame, square, bicubic) to ``cfg.aes_size``."""
    gen = as_generator(rng, cfg.seed)
    idx = sparse_frame_indices(v.num_frames, cfg.aes_frames, cfg.mode, gen)
    return _resized_aesthetic(v, idx, cfg.aes_size, "aesthetic")


def overdownsampled_view(v: Video, cfg: ViewConfig, rng: SeedLike = None,
                         pair: ViewTensor | None = None) -> ViewTensor:
    """Like :func:`aesthetic_view` at ``cfg.aes_over_size``.

    When ``pair`` (the matching aesthetic view) is given its frame indices are
    reused; otherwise indices are drawn exactly as ``aesthetic_view`` would
    from the same ``rng`` state.
    """
    if pair is not None:
        idx = list(pair.provenance["frame_indices"])
    else:
        gen = as_generator(rng, cfg.seed)
        idx = sparse_frame_indices(v.num_frames, cfg.aes_frames, cfg.mode, gen)
    return _resized_aesthetic(v, idx, cfg.aes_over_size, "aesthetic_over")


def aesthetic_pair(v: Video, cfg: ViewConfig, rng: SeedLike = None) -> tuple[ViewTensor, ViewTensor]:
    a = aesthetic_view(v, cfg, rng)
    return a, overdownsampled_view(v, cfg, pair=a)


def _cell_bounds(n: int, grid: int) -> list[tuple[int, int]]:
    return [((u * n) // grid, ((u + 1) * n) // grid) for u in range(grid)]


def _fragment_source_shape(h: int, w: int, cfg: ViewConfig) -> tuple[int, int]:
    need = cfg.tech_size
    if min(h, w) >= need:
        return h, w
    scale = need / min(h, w)
    return max(need, int(np.ceil(h * scale - 1e-9))), max(need, int(np.ceil(w * scale - 1e-9)))


def clip_starts(T: int, cfg: ViewConfig, rng: np.random.Generator | None = None) -> list[int]:
    """Start frames of technical clips: one random start in train mode, or
    ``tech_clips_infer`` evenly spaced starts in infer mode."""
    span = max(T - cfg.tech_clip_len, 0)
    if cfg.mode == "train":
        return [int(rng.integers(0, span + 1))]
    n = cfg.tech_clips_infer
    if n == 1:
        return [0]
    return [min(max((k * span) // (n - 1), 0), span) for k in range(n)]


def technical_view(v: Video, cfg: ViewConfig, rng: SeedLike = None) -> list[ViewTensor]:
    """Fragments: for each clip, one S_f x S_f patch per G_f x G_f grid cell.

    Crop offsets are drawn once per (clip, cell) from a generator keyed by
    (root, video id, clip index, u, v) and shared by every frame of the clip.
    Frames whose cells are smaller than the patch are first upscaled
    bilinearly; the resized shape is recorded in the provenance.
    """
    g, s = cfg.frag_grid, cfg.frag_patch
    root = root_seed(rng, cfg.seed)
    src_h, src_w = _fragment_source_shape(v.height, v.width, cfg)
    src = v.frames
    if (src_h, src_w) != (v.height, v.width):
        src = np.clip(resize_frames(src, src_h, src_w, "bilinear"), 0.0, 1.0)
    rows, cols = _cell_bounds(src_h, g), _cell_bounds(src_w, g)
    starts = clip_starts(v.num_frames, cfg, keyed_rng(root, v.id, "clip-start"))
    views = []
    for k, start in enumerate(starts):
        frame_idx = [(start + i) % v.num_frames for i in range(cfg.tech_clip_len)]
        if start + cfg.tech_clip_len <= v.num_frames:
            rows_t = slice(start, start + cfg.tech_clip_len)
        else:
            rows_t = np.asarray(frame_idx)
        out = np.empty((cfg.tech_clip_len, g * s, g * s, v.channels))
        offsets = np.empty((g, g, 2), dtype=np.int64)
        for u, (r0, r1) in enumerate(rows):
            for w_, (c0, c1) in enumerate(cols):
                cell_rng = keyed_rng(root, v.id, k, u, w_)
                y = r0 + int(cell_rng.integers(0, r1 - r0 - s + 1))
                x = c0 + int(cell_rng.integers(0, c1 - c0 - s + 1))
                offsets[u, w_] = (y, x)
                out[:, u * s:(u + 1) * s, w_ * s:(w_ + 1) * s] = src[rows_t, y:y + s, x:x + s]
        prov = {
            "video_id": v.id,
            "clip_index": k,
            "start": start,
            "frame_indices": frame_idx,
            "source_shape": [v.height, v.width],
            "resized_shape": [src_h, src_w],
            "grid": g,
            "patch": s,
            "offsets": offsets.tolist(),
            "root_seed": root,
        }
        views.append(ViewTensor(out, "technical", prov))
    return views


def fragment_source(v: Video, view: ViewTensor) -> np.ndarray:
    """Frames the technical view was cut from (upscaled if the provenance says so)."""
    src_h, src_w = view.provenance["resized_shape"]
    src = v.frames
    if (src_h, src_w) != (v.height, v.width):
        src = np.clip(resize_frames(src, src_h, src_w, "bilinear"), 0.0, 1.0)
    return src[np.asarray(view.provenance["frame_indices"])]


def decompose(v: Video, cfg: ViewConfig, rng: SeedLike = None) -> dict[str, list[ViewTensor]]:
    """All views used by the model for ``v``; the over-downsampled view only in train mode."""
    gen = as_generator(rng, cfg.seed)
    aes = aesthetic_view(v, cfg, gen)
    out = {"aesthetic": [aes], "technical": technical_view(v, cfg, gen)}
    if cfg.mode == "train":
        out["aesthetic_over"] = [overdownsampled_view(v, cfg, pair=aes)]
    return out


def mosaic(view: ViewTensor, cols: int | None = None) -> np.ndarray:
    """Tile the view's frames into one (rows*side, cols*side, C) uint8 image."""
    n, h, w, c = view.data.shape
    cols = cols or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    canvas = np.zeros((rows * h, cols * w, c))
    for i, frame in enumerate(view.data):
        r, q = divmod(i, cols)
        canvas[r * h:(r + 1) * h, q * w:(q + 1) * w] = frame
    return to_uint8(canvas)


def save_views(views: dict[str, list[ViewTensor]], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for kind, items in sorted(views.items()):
        for i, view in enumerate(items):
            stem = f"{kind}_{i}"
            img = mosaic(view)
            mode = "L" if img.shape[-1] == 1 else "RGB"
            png = out / f"{stem}.png"
            buf = io.BytesIO()
            Image.fromarray(img[..., 0] if mode == "L" else img, mode).save(buf, format="PNG")
            atomic_write_bytes(png, buf.getvalue())
            meta = out / f"{stem}.json"
            write_json(meta, {"kind": view.kind, "shape": list(view.shape), "provenance": view.provenance})
            written += [png, meta]
    return written

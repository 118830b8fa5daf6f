"""Video container, frame-directory I/O, synthetic videos and degradations.

Frames are stored as float64 arrays of shape (T, H, W, C), channels-last,
with values in [0, 1]. Files on disk are 8-bit.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image
from scipy import ndimage

from . import DoverError
from ._io import atomic_write_bytes
from .rng import keyed_rng

MANIFEST_NAME = "manifest.json"

# Degradation levels that map to a technical ground truth of 0.
BLUR_FULL = 2.5
NOISE_FULL = 0.1
JITTER_FULL = 8.0

# Fine-scale texture of synthetic frames: checker grain amplitude and the
# smoothing width of the high-frequency sensor noise.
GRAIN_AMPLITUDE = 0.06
FINE_NOISE_SMOOTH = 4.0

PATTERNS = ("gradient", "checkerboard", "thirds_composition", "random_texture")
DEGRADATIONS = ("blur", "noise", "jitter", "blockiness")


class VideoIOError(DoverError, OSError):
    """Raised when a frame directory or raw file cannot be read."""

    def __init__(self, message: str, path: str | os.PathLike | None = None):
        self.path = None if path is None else str(path)
        super().__init__(message if path is None else f"{message}: {path}")


@dataclass(frozen=True, eq=False)
class Video:
    frames: np.ndarray
    fps: float = 25.0
    id: str = "video"
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim == 3:
            frames = frames[..., None]
        if frames.ndim != 4:
            raise ValueError(f"frames must be (T, H, W, C), got shape {frames.shape}")
        t, h, w, c = frames.shape
        if t < 1 or h < 1 or w < 1:
            raise ValueError(f"empty video dimensions {frames.shape}")
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite values")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise ValueError("frame values must lie in [0, 1]")
        if frames is self.frames:
            frames = frames.copy()
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def channels(self) -> int:
        return self.frames.shape[3]

    def replace(self, frames: np.ndarray, **meta) -> "Video":
        return Video(frames, fps=self.fps, id=self.id, metadata={**self.metadata, **meta})


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x) * 255.0), 0, 255).astype(np.uint8)


def quantize8(x: np.ndarray) -> np.ndarray:
    """Round to the nearest 8-bit level, staying in float64."""
    return to_uint8(x).astype(np.float64) / 255.0


# --------------------------------------------------------------------------- I/O


def _read_png(path: Path, channels: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            im = im.convert("L" if channels == 1 else "RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise VideoIOError("undecodable frame", path) from exc
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


def load_video(path: str | os.PathLike) -> Video:
    """Load a video from a frame directory described by ``manifest.json``.

    The manifest holds ``id``, ``fps``, ``height``, ``width``, ``channels`` and
    either ``frames`` (relative PNG paths, in order) or ``raw`` (a planar
    uint8 file laid out as T x C x H x W, with ``num_frames``).

    Raises:
        VideoIOError: missing manifest, no frames, frame count or dimension
            mismatch, or an undecodable frame (the message names the file).
    """
    root = Path(path)
    if not root.is_dir():
        raise VideoIOError("not a frame directory", root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        if not any(p.suffix.lower() == ".png" for p in root.iterdir()):
            raise VideoIOError("no frames", root)
        raise VideoIOError("missing manifest", manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, ValueError) as exc:
        raise VideoIOError("unreadable manifest", manifest_path) from exc
    try:
        h, w, c = int(manifest["height"]), int(manifest["width"]), int(manifest["channels"])
    except (KeyError, TypeError, ValueError) as exc:
        raise VideoIOError(f"manifest lacks a valid {exc} field", manifest_path) from exc
    vid = str(manifest.get("id", root.name))
    fps = float(manifest.get("fps", 25.0))

    if "raw" in manifest:
        raw_path = root / manifest["raw"]
        if not raw_path.exists():
            raise VideoIOError("no frames", raw_path)
        t = int(manifest.get("num_frames", 0))
        buf = np.fromfile(raw_path, dtype=np.uint8)
        if t < 1 or buf.size != t * c * h * w:
            raise VideoIOError(
                f"frame count mismatch: raw file holds {buf.size} bytes, expected {t}x{c}x{h}x{w}",
                raw_path,
            )
        arr = buf.reshape(t, c, h, w).transpose(0, 2, 3, 1)
        return Video(arr.astype(np.float64) / 255.0, fps=fps, id=vid)

    listed = list(manifest.get("frames", []))
    if not listed:
        raise VideoIOError("no frames", root)
    present = [name for name in listed if (root / name).exists()]
    expected = int(manifest.get("num_frames", len(listed)))
    if len(present) != len(listed) or expected != len(listed):
        raise VideoIOError(
            f"frame count mismatch: manifest expects {expected} frames, found {len(present)}", root
        )
    frames = np.empty((len(listed), h, w, c), dtype=np.uint8)
    for i, name in enumerate(listed):
        arr = _read_png(root / name, c)
        if arr.shape != (h, w, c):
            raise VideoIOError(f"dimension mismatch: {arr.shape} != {(h, w, c)}", root / name)
        frames[i] = arr
    return Video(frames.astype(np.float64) / 255.0, fps=fps, id=vid)


def save_video(v: Video, path: str | os.PathLike) -> Path:
    """Write ``v`` as 8-bit PNG frames plus ``manifest.json``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    data = to_uint8(v.frames)
    names = []
    for i, frame in enumerate(data):
        name = f"frame_{i:05d}.png"
        img = Image.fromarray(frame[..., 0] if v.channels == 1 else frame, "L" if v.channels == 1 else "RGB")
        tmp = root / f".{name}.tmp"
        img.save(tmp, format="PNG")
        os.replace(tmp, root / name)
        names.append(name)
    manifest = {
        "id": v.id,
        "fps": v.fps,
        "frames": names,
        "height": v.height,
        "width": v.width,
        "channels": v.channels,
    }
    atomic_write_bytes(root / MANIFEST_NAME, (json.dumps(manifest, indent=2) + "\n").encode())
    return root


# --------------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SynthSpec:
    base_pattern: str = "thirds_composition"
    aesthetic_level: float = 0.5
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0
    jitter_px: int = 0
    T: int = 8
    H: int = 64
    W: int = 64
    C: int = 3
    seed: int = 0
    fps: float = 25.0
    id: str | None = None

    def __post_init__(self):
        if self.base_pattern not in PATTERNS:
            raise ValueError(f"unknown base_pattern {self.base_pattern!r}")
        if not 0.0 <= self.aesthetic_level <= 1.0:
            raise ValueError("aesthetic_level must be in [0, 1]")
        if self.blur_sigma < 0 or self.noise_sigma < 0 or self.jitter_px < 0:
            raise ValueError("degradation levels must be non-negative")
        if self.T < 1 or self.H < 1 or self.W < 1 or self.C not in (1, 3):
            raise ValueError(f"invalid dimensions T={self.T} H={self.H} W={self.W} C={self.C}")

    @property
    def video_id(self) -> str:
        return self.id if self.id is not None else f"synth-{self.seed}"

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


def normalized_degradation(blur_sigma: float, noise_sigma: float, jitter_px: float) -> float:
    """Combined degradation in [0, 1]; each term saturates at its *_FULL level."""
    d = blur_sigma / BLUR_FULL + noise_sigma / NOISE_FULL + jitter_px / JITTER_FULL
    return float(min(1.0, d))


def _palette(rng: np.random.Generator, c: int, lo=0.2, hi=0.8) -> np.ndarray:
    return rng.uniform(lo, hi, size=c)


def _gradient(h, w, c, rng):
    yy, xx = np.mgrid[0:h, 0:w]
    t = (xx / max(w - 1, 1) + yy / max(h - 1, 1)) / 2.0
    a, b = _palette(rng, c), _palette(rng, c)
    return a + (b - a) * t[..., None]


def _checkerboard(h, w, c, rng):
    block = max(1, min(h, w) // 8)
    yy, xx = np.mgrid[0:h, 0:w]
    mask = ((yy // block + xx // block) % 2).astype(np.float64)[..., None]
    a, b = _palette(rng, c, 0.2, 0.4), _palette(rng, c, 0.6, 0.8)
    return a + (b - a) * mask


def _fine_grain(h, w, amplitude):
    # one-pixel checker: erased by blur, cancelled exactly by symmetric even-ratio downscaling
    return amplitude * np.where((np.arange(h)[:, None] + np.arange(w)[None, :]) % 2 == 0, 1.0, -1.0)


def _random_texture(h, w, c, rng):
    base = rng.uniform(-1.0, 1.0, size=(h, w, c))
    base = ndimage.gaussian_filter(base, sigma=(0.8, 0.8, 0), mode="wrap")
    base /= max(np.abs(base).max(), 1e-12)
    return 0.5 + 0.3 * base


def _soft(d, width):
    """Smooth 0..1 step, 1 where ``d`` < 0, with a logistic edge of ``width`` px."""
    return 1.0 / (1.0 + np.exp(np.clip(d / width, -50, 50)))


def _thirds_composition(h, w, c, level, rng):
    """A framed subject whose placement and surroundings depend on ``level``.

    High levels: horizon and subject on rule-of-thirds lines, uncluttered.
    Low levels: subject drifts toward a corner and shrinks, the horizon tilts
    away from the thirds, and soft distractor blobs clutter the frame. All
    edges are soft (several px), so the layout survives mild blur and
    downscaling.
    """
    s = min(h, w)
    edge = max(s * 0.012, 0.5)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sky, ground = _palette(rng, c, 0.45, 0.75), _palette(rng, c, 0.2, 0.45)
    horizon = h * (2.0 / 3.0 + (1.0 - level) * rng.uniform(-0.3, 0.15))
    horizon_line = horizon + (1.0 - level) * rng.uniform(-0.25, 0.25) * (xx - w / 2)
    sky_w = _soft(yy - horizon_line, 2 * edge)
    img = ground + (sky - ground) * sky_w[..., None]

    n_clutter = int(round((1.0 - level) * 16))
    for _ in range(n_clutter):
        r = rng.uniform(0.03, 0.06) * s
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        blob = _soft(np.hypot(yy - cy, xx - cx) - r, edge)[..., None]
        img = img + (_palette(rng, c, 0.1, 0.9) - img) * blob

    side = rng.integers(0, 2)
    thirds = np.array([h / 3.0, w / 3.0 if side == 0 else 2 * w / 3.0])
    corner = np.array([h * rng.uniform(0.0, 0.1), w * (rng.uniform(-0.05, 0.05) + (0.0 if side == 0 else 1.0))])
    cy, cx = thirds + (1.0 - level) * (corner - thirds)
    radius = s * (0.08 + 0.08 * level)
    subject_w = _soft(np.hypot(yy - cy, xx - cx) - radius, edge)[..., None]
    subject = np.clip(1.0 - sky + rng.uniform(-0.05, 0.05), 0.2, 0.8)
    return img + (subject - img) * subject_w


def base_frame(spec: SynthSpec) -> np.ndarray:
    """Clean (undegraded) frame of ``spec``, quantized to 8 bits, shape (H, W, C)."""
    rng = keyed_rng(spec.seed, "pattern")
    h, w, c = spec.H, spec.W, spec.C
    if spec.base_pattern == "gradient":
        img = _gradient(h, w, c, rng)
    elif spec.base_pattern == "checkerboard":
        img = _checkerboard(h, w, c, rng)
    elif spec.base_pattern == "random_texture":
        img = _random_texture(h, w, c, rng)
    else:
        img = _thirds_composition(h, w, c, spec.aesthetic_level, rng)
        img = img + _fine_grain(h, w, GRAIN_AMPLITUDE)[..., None]
    return quantize8(np.clip(img, 0.0, 1.0))


def synth_video(spec: SynthSpec) -> Video:
    """Render ``spec`` into a Video carrying ``a_gt`` and ``t_gt`` metadata.

    Degradations are applied in the order blur, jitter, noise; the result is
    clipped and quantized to 8 bits. Output depends only on ``spec``.
    """
    base = base_frame(spec)
    if spec.blur_sigma > 0:
        # the clean frames are identical, so blur once before jittering
        base = _blur(base[None], spec.blur_sigma)[0]
    frames = np.repeat(base[None], spec.T, axis=0)
    if spec.jitter_px > 0:
        frames = _jitter(frames, float(spec.jitter_px), keyed_rng(spec.seed, "jitter"))
    if spec.noise_sigma > 0:
        frames = frames + spec.noise_sigma * fine_noise(frames.shape, keyed_rng(spec.seed, "noise"))
    frames = quantize8(np.clip(frames, 0.0, 1.0))
    return Video(frames, fps=spec.fps, id=spec.video_id, metadata=synth_metadata(spec))


def synth_metadata(spec: SynthSpec) -> dict[str, Any]:
    return {
        "a_gt": float(spec.aesthetic_level),
        "t_gt": 1.0 - normalized_degradation(spec.blur_sigma, spec.noise_sigma, spec.jitter_px),
        "synth_spec": dict(spec.__dict__),
    }


# ------------------------------------------------------------------ degradations


def fine_noise(shape: tuple[int, int, int, int], rng: np.random.Generator) -> np.ndarray:
    """Unit-variance Gaussian noise concentrated near the pixel Nyquist frequency.

    White noise is smoothed (sigma 4 px, circular), rescaled to unit
    per-pixel variance and modulated by a (-1)^(x+y) checker. It is
    independent across frames and channels, visible at native resolution and
    strongly attenuated by anti-aliased downscaling.
    """
    t, h, w, c = shape
    z = rng.standard_normal(shape)
    z = ndimage.gaussian_filter(z, sigma=(0, FINE_NOISE_SMOOTH, FINE_NOISE_SMOOTH, 0), mode="wrap")
    z /= _smoothing_gain(h, w)
    checker = np.where((np.arange(h)[:, None] + np.arange(w)[None, :]) % 2 == 0, 1.0, -1.0)
    return z * checker[None, :, :, None]


@lru_cache(maxsize=64)
def _smoothing_gain(h: int, w: int) -> float:
    # L2 norm of the circular smoothing kernel, so that smoothed white noise has unit variance
    delta = np.zeros((h, w))
    delta[0, 0] = 1.0
    k = ndimage.gaussian_filter(delta, sigma=FINE_NOISE_SMOOTH, mode="wrap")
    return float(np.sqrt((k * k).sum()))


def _blur(frames: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(frames, sigma=(0, sigma, sigma, 0), mode="reflect")


def _jitter(frames: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    # integer circular shifts; direction per frame fixed by rng, magnitude by level
    u = rng.uniform(-1.0, 1.0, size=(frames.shape[0], 2))
    out = np.empty_like(frames)
    for t, (dy, dx) in enumerate(np.rint(level * u).astype(int)):
        out[t] = np.roll(frames[t], shift=(dy, dx), axis=(0, 1))
    return out


def block_means(frames: np.ndarray, block: int = 8) -> np.ndarray:
    """Replace each block x block tile (partial tiles at borders) by its mean."""
    t, h, w, c = frames.shape
    ph, pw = -h % block, -w % block
    padded = np.pad(frames, ((0, 0), (0, ph), (0, pw), (0, 0)))
    ones = np.pad(np.ones((h, w)), ((0, ph), (0, pw)))
    hb, wb = padded.shape[1] // block, padded.shape[2] // block
    sums = padded.reshape(t, hb, block, wb, block, c).sum(axis=(2, 4))
    counts = ones.reshape(hb, block, wb, block).sum(axis=(1, 3))
    means = sums / counts[None, :, :, None]
    full = np.repeat(np.repeat(means, block, axis=1), block, axis=2)
    return full[:, :h, :w]


def apply_degradation(v: Video, kind: str, level: float, seed: int = 0) -> Video:
    """Return a degraded copy of ``v``.

    Args:
        kind: ``blur`` (Gaussian sigma in px), ``noise`` (additive Gaussian std),
            ``jitter`` (max per-frame circular shift in px) or ``blockiness``
            (blend weight toward 8x8 block means; 1.0 is fully block-constant).
        level: non-negative strength; 0 returns an identical copy.
        seed: randomness for noise and jitter. For a fixed seed the error
            grows monotonically with ``level``.
    """
    if kind not in DEGRADATIONS:
        raise ValueError(f"unknown degradation kind {kind!r}; expected one of {DEGRADATIONS}")
    if level < 0:
        raise ValueError("level must be non-negative")
    frames = v.frames
    if level == 0:
        out = frames.copy()
    elif kind == "blur":
        out = _blur(frames, level)
    elif kind == "noise":
        z = keyed_rng(seed, "degrade-noise", v.id).standard_normal(frames.shape)
        out = frames + level * z
    elif kind == "jitter":
        out = _jitter(frames, level, keyed_rng(seed, "degrade-jitter", v.id))
    else:
        out = frames + min(level, 1.0) * (block_means(frames) - frames)
    return v.replace(np.clip(out, 0.0, 1.0), degradation={"kind": kind, "level": level})

"""Separable resampling with explicit weight matrices.

Bicubic uses the Catmull-Rom kernel (a = -0.5). When the downscale ratio
along an axis exceeds 2 the kernel is convolved with a box of width equal to
the ratio, i.e. the continuous bicubic reconstruction is area-averaged over
each output pixel's footprint. Borders replicate edge pixels.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

ANTIALIAS_RATIO = 2.0


def catmull_rom(x: np.ndarray) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    near = x <= 1.0
    far = (x > 1.0) & (x < 2.0)
    xn, xf = x[near], x[far]
    out[near] = 1.5 * xn**3 - 2.5 * xn**2 + 1.0
    out[far] = -0.5 * xf**3 + 2.5 * xf**2 - 4.0 * xf + 2.0
    return out


def _catmull_rom_integral(x: np.ndarray) -> np.ndarray:
    """Antiderivative of the Catmull-Rom kernel, zero at 0 (odd, +-1/2 at +-inf)."""
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    out = np.full_like(a, 0.5)
    near = a <= 1.0
    far = (a > 1.0) & (a < 2.0)
    an, af = a[near], a[far]
    out[near] = 0.375 * an**4 - (2.5 / 3.0) * an**3 + an
    g1 = 0.375 - 2.5 / 3.0 + 1.0

    def p(t):
        return -0.125 * t**4 + (2.5 / 3.0) * t**3 - 2.0 * t**2 + 2.0 * t

    out[far] = g1 + p(af) - p(1.0)
    return np.sign(x) * out


def box_catmull_rom(d: np.ndarray, width: float) -> np.ndarray:
    """Catmull-Rom convolved with a unit-area box of the given width."""
    half = width / 2.0
    return (_catmull_rom_integral(d + half) - _catmull_rom_integral(d - half)) / width


def triangle(x: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.abs(np.asarray(x, dtype=np.float64)), 0.0, None)


@lru_cache(maxsize=256)
def _weights(n_in: int, n_out: int, method: str) -> np.ndarray:
    ratio = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * ratio - 0.5
    if method == "bicubic":
        if ratio > ANTIALIAS_RATIO:
            support = 2.0 + ratio / 2.0

            def kernel(d):
                return box_catmull_rom(d, ratio)

        else:
            support = 2.0
            kernel = catmull_rom
    elif method == "bilinear":
        if ratio > 1.0:
            raise ValueError("bilinear is only used for upscaling")
        support = 1.0
        kernel = triangle
    else:
        raise ValueError(f"unknown method {method!r}")
    mat = np.zeros((n_out, n_in))
    for i, c in enumerate(centers):
        lo, hi = int(np.floor(c - support)), int(np.ceil(c + support))
        taps = np.arange(lo, hi + 1)
        w = kernel(taps - c)
        np.add.at(mat[i], np.clip(taps, 0, n_in - 1), w)
    mat /= mat.sum(axis=1, keepdims=True)
    mat.setflags(write=False)
    return mat


def resize_weights(n_in: int, n_out: int, method: str = "bicubic") -> np.ndarray:
    """(n_out, n_in) matrix mapping a 1-D signal to its resampled version."""
    if n_in < 1 or n_out < 1:
        raise ValueError("sizes must be positive")
    if n_in == n_out:
        return np.eye(n_in)
    return _weights(n_in, n_out, method)


def resize_frames(frames: np.ndarray, out_h: int, out_w: int, method: str = "bicubic") -> np.ndarray:
    """Resize (T, H, W, C) frames to (T, out_h, out_w, C)."""
    t, h, w, c = frames.shape
    out = frames
    if out_h != h:
        wy = resize_weights(h, out_h, method)
        out = np.einsum("ih,thwc->tiwc", wy, out, optimize=True)
    if out_w != w:
        wx = resize_weights(w, out_w, method)
        out = np.einsum("jw,tiwc->tijc", wx, out, optimize=True)
    if out is frames:
        out = frames.copy()
    return out

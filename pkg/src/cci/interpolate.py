"""Deterministic resampling kernels shared by preprocessing, map upsampling and transforms.

All kernels use half-pixel coordinate mapping (output pixel i samples source
coordinate (i + 0.5) * in / out - 0.5) with clamp-to-edge tap indices and no
anti-aliasing, so results do not depend on the scale direction. Arithmetic is
done in float64 regardless of input dtype; callers cast the result.
"""

from __future__ import annotations

import numpy as np

CUBIC_A = -0.75  # Keys kernel coefficient


def _cubic_weights(t: np.ndarray) -> np.ndarray:
    """Weights of the four bicubic taps at fractional offsets t in [0, 1).

    Returns an array of shape t.shape + (4,) for taps at offsets
    (-1, 0, 1, 2) relative to floor(src). Weights are renormalized so each
    row sums to exactly 1 in float64, which keeps constant inputs constant.
    """
    a = CUBIC_A
    x = np.stack([t + 1.0, t, 1.0 - t, 2.0 - t], axis=-1)
    w = np.where(
        x <= 1.0,
        (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0,
        a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a,
    )
    return w / w.sum(axis=-1, keepdims=True)


def _source_grid(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray]:
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src)
    return base.astype(np.int64), src - base


def _resize_axis_cubic(img: np.ndarray, n_out: int) -> np.ndarray:
    """Bicubic resample along axis 0."""
    n_in = img.shape[0]
    base, t = _source_grid(n_out, n_in)
    weights = _cubic_weights(t)  # (n_out, 4)
    out = np.zeros((n_out,) + img.shape[1:], dtype=np.float64)
    for j, off in enumerate((-1, 0, 1, 2)):
        idx = np.clip(base + off, 0, n_in - 1)
        out += weights[:, j].reshape((-1,) + (1,) * (img.ndim - 1)) * img[idx]
    return out


def resize_bicubic(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize of an (H, W) or (H, W, C) array, float64 out.

    Identity (bit-exact up to the float64 cast) when the size is unchanged.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output size must be positive")
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] == out_h and img.shape[1] == out_w:
        return img.copy()
    tmp = _resize_axis_cubic(img, out_h)
    tmp = np.swapaxes(tmp, 0, 1)
    tmp = _resize_axis_cubic(tmp, out_w)
    return np.swapaxes(tmp, 0, 1)


def _lerp_axis(img: np.ndarray, n_out: int) -> np.ndarray:
    """Bilinear resample along axis 0 in lerp form (a + t*(b-a))."""
    n_in = img.shape[0]
    base, t = _source_grid(n_out, n_in)
    i0 = np.clip(base, 0, n_in - 1)
    i1 = np.clip(base + 1, 0, n_in - 1)
    t = t.reshape((-1,) + (1,) * (img.ndim - 1))
    a = img[i0]
    return a + t * (img[i1] - a)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize, float64 out. Exact on constant inputs."""
    img = np.asarray(img, dtype=np.float64)
    tmp = _lerp_axis(img, out_h)
    tmp = np.swapaxes(tmp, 0, 1)
    tmp = _lerp_axis(tmp, out_w)
    return np.swapaxes(tmp, 0, 1)


def resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize using the pixel-area mapping floor(i*in/out).

    With an integer upscale factor f every f x f output block equals its
    source pixel exactly.
    """
    img = np.asarray(img)
    rows = (np.arange(out_h, dtype=np.int64) * img.shape[0]) // out_h
    cols = (np.arange(out_w, dtype=np.int64) * img.shape[1]) // out_w
    return img[rows][:, cols].copy()


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Mirror indices into [0, n) without repeating the edge sample.

    The extension has period 2n-2 (for n > 1): ... 2 1 | 0 1 2 | 1 0 ...
    """
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, *, reflect: bool) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear samples of an (H, W, C) image at float coordinates.

    Returns (values, inside) where ``inside`` marks samples whose coordinates
    fall within [0, H-1] x [0, W-1]. With reflect=True out-of-range taps are
    mirrored so every sample is defined; otherwise taps are clamped and the
    caller decides what to do with outside samples.
    """
    h, w = img.shape[0], img.shape[1]
    img = np.asarray(img, dtype=np.float64)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    ty = (ys - y0).reshape(ys.shape + (1,) * (img.ndim - 2))
    tx = (xs - x0).reshape(xs.shape + (1,) * (img.ndim - 2))

    def gather(yi, xi):
        if reflect:
            yi = reflect_index(yi, h)
            xi = reflect_index(xi, w)
        else:
            yi = np.clip(yi, 0, h - 1)
            xi = np.clip(xi, 0, w - 1)
        return img[yi, xi]

    top = gather(y0, x0) + tx * (gather(y0, x0 + 1) - gather(y0, x0))
    bot = gather(y0 + 1, x0) + tx * (gather(y0 + 1, x0 + 1) - gather(y0 + 1, x0))
    values = top + ty * (bot - top)
    inside = (ys >= 0.0) & (ys <= h - 1.0) & (xs >= 0.0) & (xs <= w - 1.0)
    return values, inside

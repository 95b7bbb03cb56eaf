"""Procedural test images standing in for photographs."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .linalg import SeededRng
from .samplers import RasterImage


def _grid(size: int):
    c = (np.arange(size) + 0.5) / size
    return np.meshgrid(c, c)  # x (columns), y (rows) in (0, 1)


def smooth_gradient(size: int = 64) -> RasterImage:
    x, y = _grid(size)
    return RasterImage(np.stack([0.2 + 0.6 * x, 0.2 + 0.6 * y, 0.5 + 0.3 * (x - y)], axis=-1))


def textured_image(size: int = 64, seed: int = 7, grain: float = 0.0) -> RasterImage:
    """Smooth colour fields, mid-frequency texture and a few soft blobs.

    ``grain`` adds slightly blurred pixel noise of that standard deviation,
    which keeps a 64x64 image from being fit perfectly by the image preset.
    """
    rng = SeededRng(seed)
    x, y = _grid(size)
    out = np.empty((size, size, 3))
    for c in range(3):
        acc = 0.45 + 0.15 * (x if c != 1 else y)
        for _ in range(5):
            fx, fy = rng.integers(6, 2) + 1
            phase = 2 * np.pi * rng.uniform()
            amp = 0.05 + 0.05 * rng.uniform()
            acc = acc + amp * np.sin(2 * np.pi * (fx * x + fy * y) + phase)
        out[:, :, c] = acc
    for _ in range(4):
        cx, cy = rng.uniform(2) * 0.8 + 0.1
        rad = 0.08 + 0.1 * rng.uniform()
        colour = rng.uniform(3) * 0.8 + 0.1
        d = np.hypot(x - cx, y - cy)
        cover = np.clip((rad - d) * size / 1.5 + 0.5, 0.0, 1.0)[:, :, None]
        out = out * (1 - 0.7 * cover) + 0.7 * cover * colour
    if grain > 0:
        noise = ndimage.gaussian_filter(rng.normal(out.shape), (0.6, 0.6, 0))
        out = out + grain * noise / noise.std()
    return RasterImage(np.clip(out, 0.0, 1.0))


def _segment_distance(x, y, p0, p1):
    d = np.subtract(p1, p0)
    t = np.clip(((x - p0[0]) * d[0] + (y - p0[1]) * d[1]) / (d @ d), 0.0, 1.0)
    return np.hypot(x - p0[0] - t * d[0], y - p0[1] - t * d[1])


def stroke_edit(img: RasterImage, strokes=None, colour=(0.85, 0.1, 0.1),
                width_px: float = 1.5) -> RasterImage:
    """Draw anti-aliased marker strokes (polylines in unit coordinates)."""
    if strokes is None:
        strokes = [[(0.2, 0.3), (0.35, 0.2), (0.5, 0.35), (0.65, 0.25)],
                   [(0.3, 0.7), (0.45, 0.8), (0.7, 0.65)]]
    size = img.height
    x, y = _grid(size)
    dist = np.full(x.shape, np.inf)
    for line in strokes:
        for p0, p1 in zip(line, line[1:]):
            dist = np.minimum(dist, _segment_distance(x, y, p0, p1))
    cover = np.clip(width_px / 2 - dist * size + 0.5, 0.0, 1.0)[:, :, None]
    return RasterImage(img.pixels * (1 - cover) + cover * np.asarray(colour))


def piecewise_constant(size: int = 64) -> RasterImage:
    x, y = _grid(size)
    out = np.empty((size, size, 3))
    out[:] = (0.25, 0.3, 0.4)
    out[(x > 0.1) & (x < 0.55) & (y > 0.15) & (y < 0.6)] = (0.8, 0.7, 0.3)
    out[np.hypot(x - 0.65, y - 0.65) < 0.22] = (0.3, 0.75, 0.5)
    out[(x > 0.2) & (x < 0.4) & (y > 0.7) & (y < 0.9)] = (0.9, 0.9, 0.9)
    return RasterImage(out)


def add_noise(img: RasterImage, sigma: float, rng: SeededRng) -> RasterImage:
    return RasterImage(np.clip(img.pixels + rng.normal(img.pixels.shape, std=sigma), 0.0, 1.0))

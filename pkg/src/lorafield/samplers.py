"""Training data: raster images, signed distance sources and frame sequences.

All coordinates handed to a field lie in ``[-1, 1]^m``. Pixel ``(i, j)``
(row ``i``, column ``j``) of a ``H x W`` image sits at
``(-1 + (2j + 1)/W, -1 + (2i + 1)/H)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import netpbm
from .errors import DataError, ShapeError
from .linalg import SeededRng

# --------------------------------------------------------------------------
# Images
# --------------------------------------------------------------------------


@dataclass
class RasterImage:
    pixels: np.ndarray  # (H, W, C), float64 in [0, 1]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ShapeError(f"image must be (H, W, 1|3), got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min(initial=0.0) < 0.0 or px.max(initial=0.0) > 1.0:
            raise DataError("pixel values must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @classmethod
    def read(cls, path) -> "RasterImage":
        return cls(netpbm.read(path))

    def write(self, path, maxval: int = 255) -> None:
        netpbm.write(path, self.pixels, maxval)


def pixel_centers(height: int, width: int) -> np.ndarray:
    """Coordinates of every pixel centre, row-major, shape ``(H*W, 2)``."""
    xs = -1.0 + (2.0 * np.arange(width) + 1.0) / width
    ys = -1.0 + (2.0 * np.arange(height) + 1.0) / height
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def image_grid(img: RasterImage):
    """Deterministic sweep over every pixel exactly once."""
    return pixel_centers(img.height, img.width), img.pixels.reshape(-1, img.channels)


def sample_image_batch(img: RasterImage, count: int, rng: SeededRng):
    """Uniform pixel-centre samples with their exact pixel values."""
    if count < 1:
        raise ValueError("count must be >= 1")
    idx = rng.integers(img.height * img.width, count)
    rows, cols = np.divmod(idx, img.width)
    x = np.stack([-1.0 + (2.0 * cols + 1.0) / img.width,
                  -1.0 + (2.0 * rows + 1.0) / img.height], axis=1)
    return x, img.pixels[rows, cols]


def gaussian_lowfreq_edit(img: RasterImage, sigma: float, blur_radius: float, k: float,
                          rng: SeededRng) -> RasterImage:
    """``x + k * blur(noise)`` clamped to [0, 1], noise ~ N(0, sigma^2) per sample."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    noise = rng.normal(img.pixels.shape, std=sigma)
    if blur_radius > 0:
        noise = ndimage.gaussian_filter(noise, sigma=(blur_radius, blur_radius, 0), mode="reflect")
    return RasterImage(np.clip(img.pixels + k * noise, 0.0, 1.0))


# --------------------------------------------------------------------------
# Frame sequences
# --------------------------------------------------------------------------


@dataclass
class FrameSequence:
    frames: list

    def __post_init__(self):
        if len(self.frames) < 2:
            raise DataError("a frame sequence needs at least two frames")
        first = self.frames[0]
        for f in self.frames[1:]:
            if type(f) is not type(first):
                raise DataError("frames must share one type")
            if isinstance(f, RasterImage) and f.pixels.shape != first.pixels.shape:
                raise DataError(f"frame shape {f.pixels.shape} != {first.pixels.shape}")

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, k):
        return self.frames[k]

    @classmethod
    def read_dir(cls, directory) -> "FrameSequence":
        paths = sorted(p for p in Path(directory).iterdir()
                       if p.suffix.lower() in (".ppm", ".pgm"))
        return cls([RasterImage.read(p) for p in paths])

    def write_dir(self, directory, prefix: str = "frame") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for k, f in enumerate(self.frames, start=1):
            p = directory / f"{prefix}_{k:04d}.ppm"
            f.write(p)
            out.append(p)
        return out


def _periodic_pattern(size: int) -> np.ndarray:
    t = 2.0 * np.pi * np.arange(size) / size
    u, v = np.meshgrid(t, t)
    r = np.sin(u) * np.cos(2 * v) + 0.5 * np.sin(3 * u + v)
    g = np.cos(2 * u - v) + 0.4 * np.sin(5 * u)
    b = np.sin(u + 3 * v) * np.cos(u)
    return np.stack([r, g, b], axis=-1) / 1.6


def synthetic_video(kind: str, frames: int, size: int, velocity: float = 1.0,
                    max_delta: float = 0.25, grain: float = 0.0, seed: int = 0) -> FrameSequence:
    """Procedural test footage.

    ``"translating"`` rolls a horizontally periodic texture by ``velocity``
    pixels per frame (wrapping around); ``"disk"`` grows an anti-aliased
    disk by ``velocity`` pixels of radius per frame. Contrast is reduced as
    needed so no pixel changes by more than ``max_delta`` between frames.
    ``grain`` adds periodic fine-scale noise to the translating texture.
    """
    if frames < 2:
        raise ValueError("frames must be >= 2")
    if kind == "translating":
        pattern = _periodic_pattern(size)
        if grain > 0:
            noise = ndimage.gaussian_filter(SeededRng(seed).normal(pattern.shape), (0.6, 0.6, 0),
                                            mode="wrap")
            pattern = pattern + grain * noise / noise.std()
        shift = int(round(velocity))
        raw = [np.roll(pattern, k * shift, axis=1) for k in range(frames)]
    elif kind == "disk":
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        r = np.hypot(xx - size / 2, yy - size / 2)
        raw = []
        for k in range(frames):
            radius = size / 8 + k * velocity
            cover = np.clip(radius - r + 0.5, 0.0, 1.0)
            raw.append(np.stack([cover, 0.6 * cover, 1.0 - cover], axis=-1) - 0.5)
    else:
        raise ValueError(f"unknown synthetic video kind {kind!r}")
    worst = max(float(np.max(np.abs(b - a))) for a, b in zip(raw, raw[1:]))
    contrast = 0.8 if worst == 0 else min(0.8, max_delta / worst)
    return FrameSequence([RasterImage(np.clip(0.5 + contrast * f, 0.0, 1.0)) for f in raw])


# --------------------------------------------------------------------------
# Signed distance sources
# --------------------------------------------------------------------------


class Sdf:
    """Analytic signed distance: negative inside, positive outside."""

    exact = True

    def __call__(self, p) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, p, h: float = 1e-5) -> np.ndarray:
        p = np.atleast_2d(p)
        g = np.empty_like(p)
        for j in range(p.shape[1]):
            e = np.zeros(p.shape[1])
            e[j] = h
            g[:, j] = (self(p + e) - self(p - e)) / (2 * h)
        return g


@dataclass
class Sphere(Sdf):
    radius: float
    center: tuple = (0.0, 0.0, 0.0)

    def __call__(self, p):
        p = np.atleast_2d(p)
        return np.linalg.norm(p - np.asarray(self.center), axis=1) - self.radius


@dataclass
class Box(Sdf):
    half_extents: tuple
    center: tuple = (0.0, 0.0, 0.0)

    def __call__(self, p):
        q = np.abs(np.atleast_2d(p) - np.asarray(self.center)) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside


@dataclass
class Torus(Sdf):
    """Ring around the y axis: major radius ``R``, tube radius ``r``."""

    major: float
    minor: float
    center: tuple = (0.0, 0.0, 0.0)

    def __call__(self, p):
        q = np.atleast_2d(p) - np.asarray(self.center)
        ring = np.hypot(q[:, 0], q[:, 2]) - self.major
        return np.hypot(ring, q[:, 1]) - self.minor


@dataclass
class Translate(Sdf):
    shape: Sdf
    offset: tuple

    @property
    def exact(self):
        return self.shape.exact

    def __call__(self, p):
        return self.shape(np.atleast_2d(p) - np.asarray(self.offset))


@dataclass
class Union(Sdf):
    """``min(a, b)``: exact outside the union; inside, ``|d|`` may underestimate
    the depth where the operands overlap."""

    a: Sdf
    b: Sdf
    exact = False

    def __call__(self, p):
        return np.minimum(self.a(p), self.b(p))


@dataclass
class SmoothUnion(Sdf):
    """Polynomial smooth minimum with blend width ``k``; within ``k/4`` of
    ``min(a, b)`` everywhere."""

    a: Sdf
    b: Sdf
    k: float = 0.1
    exact = False

    def __call__(self, p):
        da, db = self.a(p), self.b(p)
        h = np.clip(0.5 + 0.5 * (db - da) / self.k, 0.0, 1.0)
        return db * (1 - h) + da * h - self.k * h * (1 - h)


@dataclass
class SampleFileSdf(Sdf):
    """Precomputed samples; queries return the nearest sample's distance."""

    points: np.ndarray
    distances: np.ndarray
    exact = False
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.distances = np.asarray(self.distances, dtype=np.float64).ravel()
        if len(self.points) == 0:
            raise DataError("SDF sample file is empty")
        if len(self.points) != len(self.distances):
            raise DataError("point and distance counts differ")
        self._tree = cKDTree(self.points)

    def __call__(self, p):
        _, idx = self._tree.query(np.atleast_2d(p))
        return self.distances[idx]

    @classmethod
    def read(cls, path) -> "SampleFileSdf":
        return cls(*read_sdf_samples(path))


def read_sdf_samples(path):
    """Parse ``SDFS v1 <count>`` followed by ``count`` lines of ``x y z d``."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DataError("SDF sample file is empty")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "SDFS" or head[1] != "v1":
        raise DataError(f"bad SDF sample header {lines[0]!r}")
    try:
        count = int(head[2])
    except ValueError:
        raise DataError(f"bad sample count {head[2]!r}") from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if count < 1:
        raise DataError("SDF sample file is empty")
    if len(body) != count:
        raise DataError(f"header promises {count} samples, found {len(body)}")
    rows = np.empty((count, 4))
    for i, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != 4:
            raise DataError(f"line {i + 2}: expected 4 values")
        try:
            rows[i] = [float(v) for v in parts]
        except ValueError:
            raise DataError(f"line {i + 2}: not a number") from None
    if not np.all(np.isfinite(rows)):
        raise DataError("SDF samples contain NaN or infinite values")
    if np.any(np.abs(rows[:, :3]) > 1.0):
        raise DataError("SDF sample coordinates must lie in [-1, 1]^3")
    return rows[:, :3], rows[:, 3]


def write_sdf_samples(path, points, distances) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    distances = np.asarray(distances, dtype=np.float64).ravel()
    lines = [f"SDFS v1 {len(points)}"]
    lines += [f"{x!r} {y!r} {z!r} {d!r}" for (x, y, z), d in zip(points.tolist(), distances.tolist())]
    netpbm.atomic_write(path, ("\n".join(lines) + "\n").encode())


def sample_sdf_batch(src: Sdf, count: int, rng: SeededRng, surface_fraction: float = 0.5):
    """Mixture of uniform box samples and near-surface samples.

    Near-surface points are uniform points projected onto the zero set
    along the (finite-difference) gradient, then jittered by N(0, 0.01^2).
    For sample files the projection is replaced by picking stored points
    with ``|d| < 0.05`` (or the closest tenth of the file).
    """
    if not 0.0 <= surface_fraction <= 1.0:
        raise ValueError("surface_fraction must be in [0, 1]")
    n_surf = int(round(count * surface_fraction))
    uniform = 2.0 * rng.uniform((count - n_surf, 3)) - 1.0
    if n_surf:
        if isinstance(src, SampleFileSdf):
            near = np.flatnonzero(np.abs(src.distances) < 0.05)
            if len(near) == 0:
                near = np.argsort(np.abs(src.distances))[: max(1, len(src.distances) // 10)]
            base = src.points[near[rng.integers(len(near), n_surf)]]
        else:
            p = 2.0 * rng.uniform((n_surf, 3)) - 1.0
            d = src(p)
            g = src.gradient(p)
            norm = np.linalg.norm(g, axis=1, keepdims=True)
            base = p - d[:, None] * g / np.maximum(norm, 1e-12)
        surf = np.clip(base + rng.normal((n_surf, 3), std=0.01), -1.0, 1.0)
        x = np.concatenate([uniform, surf])
    else:
        x = uniform
    return x, src(x)[:, None]


def uniform_box(count: int, rng: SeededRng, dim: int = 3) -> np.ndarray:
    return 2.0 * rng.uniform((count, dim)) - 1.0

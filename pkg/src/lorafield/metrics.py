"""Image and shape quality metrics, and CSV metric reports."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .linalg import SeededRng
from .samplers import RasterImage, pixel_centers

PSNR_INF = math.inf


def _pixels(img):
    return img.pixels if isinstance(img, RasterImage) else np.asarray(img, dtype=np.float64)


def mse(a, b) -> float:
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeError(f"image shapes differ: {pa.shape} vs {pb.shape}")
    return float(np.mean((pa - pb) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB for peak 1.0; identical images give ``inf``."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / err)


def discrete_tv(img) -> float:
    """Isotropic total variation with forward differences (Neumann boundary)."""
    p = _pixels(img)
    if p.ndim == 2:
        p = p[:, :, None]
    gx = np.zeros_like(p)
    gy = np.zeros_like(p)
    gx[:, :-1] = p[:, 1:] - p[:, :-1]
    gy[:-1] = p[1:] - p[:-1]
    return float(np.sum(np.sqrt(gx**2 + gy**2)))


def _inside(fn, pts) -> np.ndarray:
    return np.asarray(fn(pts), dtype=np.float64).reshape(len(pts)) < 0.0


def iou(f, g, samples: int, rng: SeededRng, chunk: int = 250_000) -> float:
    """Monte-Carlo intersection over union of ``{f < 0}`` and ``{g < 0}`` in [-1, 1]^3.

    Returns 1.0 when both solids are empty at the sampled points.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    both = either = 0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        pts = 2.0 * rng.uniform((n, 3)) - 1.0
        a, b = _inside(f, pts), _inside(g, pts)
        both += int(np.count_nonzero(a & b))
        either += int(np.count_nonzero(a | b))
        done += n
    return 1.0 if either == 0 else both / either


def render_image(field, height: int, width: int, channels: int = 3,
                 chunk: int = 16384) -> RasterImage:
    """Evaluate ``field`` at every pixel centre, clamped to [0, 1]."""
    x = pixel_centers(height, width)
    out = np.concatenate([np.asarray(field(x[i:i + chunk])) for i in range(0, len(x), chunk)])
    return RasterImage(np.clip(out, 0.0, 1.0).reshape(height, width, channels))


@dataclass
class MetricRow:
    experiment: str
    method: str
    rank: int | None
    param_count: int
    metric: str
    value: float
    seed: int = 0
    seconds: float = 0.0


def eval_field_image(field, reference: RasterImage, experiment: str = "eval",
                     method: str = "field", rank=None, param_count: int = 0,
                     seed: int = 0):
    """Render ``field`` on the reference grid; return the image and its PSNR/MSE rows."""
    img = render_image(field, reference.height, reference.width, reference.channels)
    rows = [
        MetricRow(experiment, method, rank, param_count, "psnr", psnr(img, reference), seed),
        MetricRow(experiment, method, rank, param_count, "mse", mse(img, reference), seed),
    ]
    return img, rows


REPORT_COLUMNS = [f.name for f in fields(MetricRow)]


def write_report(path, rows, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        if new:
            w.writeheader()
        for row in rows:
            d = asdict(row)
            d["rank"] = "" if d["rank"] is None else d["rank"]
            d["value"] = repr(float(d["value"]))
            w.writerow(d)


def read_report(path) -> list[MetricRow]:
    out = []
    with Path(path).open(newline="") as fh:
        for d in csv.DictReader(fh):
            out.append(MetricRow(
                d["experiment"], d["method"], int(d["rank"]) if d["rank"] else None,
                int(d["param_count"]), d["metric"], float(d["value"]),
                int(d["seed"]), float(d["seconds"]),
            ))
    return out

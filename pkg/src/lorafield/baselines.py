"""Post-hoc low-rank baselines, the small-MLP baseline and Chambolle TV denoising."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .field import FieldArchitecture, FieldNet, FieldWeights, count_params
from .linalg import svd, truncate_svd
from .samplers import RasterImage

EIG_CLAMP = 1e-10


@dataclass
class LayerInputStats:
    """Observed inputs ``X_i`` (d_in x N) of every linear layer of a field."""

    inputs: list[np.ndarray]

    def gram(self, i: int) -> np.ndarray:
        x = self.inputs[i]
        c = (x @ x.T) / x.shape[1]
        return 0.5 * (c + c.T)

    def __len__(self):
        return len(self.inputs)


def collect_layer_inputs(weights: FieldWeights, arch: FieldArchitecture, probe) -> LayerInputStats:
    """Run ``probe`` coordinates through the field and record each layer's input."""
    net = FieldNet(arch, weights)
    net.forward(probe)
    stats = LayerInputStats([h.T.copy() for h in net._cache.inputs])
    net._cache = None
    return stats


def _check_congruent(base: FieldWeights, finetuned: FieldWeights) -> None:
    if len(base.weights) != len(finetuned.weights):
        raise ShapeError("base and finetuned networks have different layer counts")
    for i, (w0, w1) in enumerate(zip(base.weights, finetuned.weights)):
        if w0.shape != w1.shape:
            raise ShapeError(f"layer {i}: base {w0.shape} vs finetuned {w1.shape}")


def _assemble(base: FieldWeights, finetuned: FieldWeights, deltas) -> FieldWeights:
    return FieldWeights([w + d for w, d in zip(base.weights, deltas)],
                        [b.copy() for b in finetuned.biases])


def _truncate(delta: np.ndarray, r: int) -> np.ndarray:
    return truncate_svd(svd(delta), min(r, *delta.shape))


def svd_baseline(base: FieldWeights, finetuned: FieldWeights, r: int) -> FieldWeights:
    """Replace each ``W_ft - W_base`` by its rank-``r`` truncated SVD."""
    _check_congruent(base, finetuned)
    deltas = [_truncate(w1 - w0, r) for w0, w1 in zip(base.weights, finetuned.weights)]
    return _assemble(base, finetuned, deltas)


def _sqrt_and_pinv_sqrt(c: np.ndarray):
    vals, vecs = np.linalg.eigh(c)
    keep = vals > EIG_CLAMP
    root = np.sqrt(np.where(keep, vals, 0.0))
    inv_root = np.where(keep, 1.0 / np.sqrt(np.where(keep, vals, 1.0)), 0.0)
    return (vecs * root) @ vecs.T, (vecs * inv_root) @ vecs.T


class _WeightedFactor:
    """SVD of ``delta C^{1/2}``, reusable across ranks."""

    def __init__(self, delta: np.ndarray, c: np.ndarray):
        self.delta = delta
        self.root, self.inv_root = _sqrt_and_pinv_sqrt(c)
        self.svd = svd(delta @ self.root)

    def at_rank(self, r: int) -> np.ndarray:
        r = min(r, len(self.svd.sigma))
        return truncate_svd(self.svd, r) @ self.inv_root


def _zero_stats(stats: LayerInputStats) -> bool:
    return all(not np.any(x) for x in stats.inputs)


def weighted_svd_baseline(base: FieldWeights, finetuned: FieldWeights, r: int,
                          stats: LayerInputStats) -> FieldWeights:
    """Rank-``r`` updates minimizing ``||(dW - dW_r) X||_F`` for the observed inputs."""
    _check_congruent(base, finetuned)
    if len(stats) != len(base.weights):
        raise ShapeError(f"stats cover {len(stats)} layers, network has {len(base.weights)}")
    if _zero_stats(stats):
        warnings.warn("layer input statistics are all zero; using plain SVD", RuntimeWarning,
                      stacklevel=2)
        return svd_baseline(base, finetuned, r)
    deltas = []
    for i, (w0, w1) in enumerate(zip(base.weights, finetuned.weights)):
        if stats.inputs[i].shape[0] != w0.shape[1]:
            raise ShapeError(f"layer {i}: stats dim {stats.inputs[i].shape[0]} vs d_in {w0.shape[1]}")
        deltas.append(_WeightedFactor(w1 - w0, stats.gram(i)).at_rank(r))
    return _assemble(base, finetuned, deltas)


def functional_error(delta: np.ndarray, approx: np.ndarray, x: np.ndarray) -> float:
    return float(np.linalg.norm((delta - approx) @ x))


def lowrank_error_curve(base: FieldWeights, finetuned: FieldWeights, stats: LayerInputStats,
                        ranks) -> list[tuple[int, int, float]]:
    """Normalized weighted-factorization error per layer and rank.

    Returns rows ``(layer, rank, ||(dW - dW_r) X|| / ||dW X||)``; a layer
    whose update has no effect on the inputs reports 0.
    """
    ranks = list(ranks)
    if not ranks:
        raise ValueError("ranks must be nonempty")
    if any(r < 1 for r in ranks):
        raise ValueError("ranks must be >= 1")
    _check_congruent(base, finetuned)
    rows = []
    for i, (w0, w1) in enumerate(zip(base.weights, finetuned.weights)):
        delta = w1 - w0
        x = stats.inputs[i]
        ref = np.linalg.norm(delta @ x)
        factor = _WeightedFactor(delta, stats.gram(i)) if ref > 0 else None
        for r in ranks:
            err = 0.0 if factor is None else functional_error(delta, factor.at_rank(r), x) / ref
            rows.append((i, r, err))
    return rows


def write_error_curve(path, rows) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "rank", "normalized_error"])
        for layer, rank, err in rows:
            w.writerow([layer, rank, repr(float(err))])


def read_error_curve(path) -> list[tuple[int, int, float]]:
    with Path(path).open(newline="") as fh:
        return [(int(r["layer"]), int(r["rank"]), float(r["normalized_error"]))
                for r in csv.DictReader(fh)]


def small_mlp_arch(target_param_count: int, reference: FieldArchitecture | None = None,
                   max_width: int | None = None) -> FieldArchitecture:
    """Narrower copy of ``reference`` whose parameter count is closest to the target.

    Every width from 1 up to ``max_width`` (default: the reference width) is
    tried; ties go to the smaller width.
    """
    reference = reference or FieldArchitecture.preset("image")
    max_width = max_width or reference.hidden_width
    if target_param_count < count_params(reference.with_width(1)):
        raise ValueError(f"target {target_param_count} is below the smallest viable network")
    best = None
    for width in range(1, max_width + 1):
        gap = abs(count_params(reference.with_width(width)) - target_param_count)
        if best is None or gap < best[0]:
            best = (gap, width)
    return reference.with_width(best[1])


def _grad(u: np.ndarray):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    return gx, gy


def _backward_diff(p: np.ndarray, axis: int) -> np.ndarray:
    # negative adjoint of the forward difference along ``axis``
    p = np.moveaxis(p, axis, 0)
    d = np.zeros_like(p)
    if p.shape[0] > 1:
        d[0] = p[0]
        d[1:-1] = p[1:-1] - p[:-2]
        d[-1] = -p[-2]
    return np.moveaxis(d, 0, axis)


def _div(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    return _backward_diff(px, 1) + _backward_diff(py, 0)


def chambolle_channel(g: np.ndarray, lam: float, iterations: int = 200,
                      tau: float = 0.125) -> np.ndarray:
    px = np.zeros_like(g)
    py = np.zeros_like(g)
    for _ in range(iterations):
        gx, gy = _grad(_div(px, py) - g / lam)
        norm = np.sqrt(gx * gx + gy * gy)
        px = (px + tau * gx) / (1.0 + tau * norm)
        py = (py + tau * gy) / (1.0 + tau * norm)
    return g - lam * _div(px, py)


def chambolle_denoise(img: RasterImage, lambda_tv: float, iterations: int = 200,
                      tau: float = 0.125) -> RasterImage:
    """ROF denoising by Chambolle's dual projection, applied per channel."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not 0 < tau <= 0.25:
        raise ValueError("tau must lie in (0, 0.25]")
    if lambda_tv <= 0:
        raise ValueError("lambda must be positive")
    px = img.pixels
    out = np.stack([chambolle_channel(px[..., c], lambda_tv, iterations, tau)
                    for c in range(px.shape[2])], axis=-1)
    return RasterImage(np.clip(out, 0.0, 1.0))

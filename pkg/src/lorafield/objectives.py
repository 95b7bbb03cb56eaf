"""Losses and energies minimized when fitting or adapting a field.

Every function returns the value together with its gradient with respect to
the network outputs; :func:`composite_objective` then back-propagates that
gradient into the trainable parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import FieldNet

KINDS = ("relative_l2", "mape", "tv_denoise")
REL_L2_EPS = 0.01
MAPE_EPS = 0.01
TV_SMOOTHING = 1e-12
DEFAULT_TV_LAMBDA = 0.02  # PSNR-to-clean peak of a sweep on the denoising fixture


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "relative_l2"
    lam: float = 0.0
    h: float | None = None  # finite-difference step; tv_denoise only
    fidelity: str = "relative_l2"  # data term used by tv_denoise

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.h is not None and self.h <= 0:
            raise ValueError("finite-difference step must be positive")
        if self.kind == "tv_denoise" and self.h is None:
            raise ValueError("tv_denoise needs a finite-difference step h")

    @property
    def fidelity_kind(self) -> str:
        return self.fidelity if self.kind == "tv_denoise" else self.kind


def relative_l2(pred, target):
    """Mean of ``(pred - target)^2 / (pred^2 + 0.01)``.

    The denominator is treated as a constant when differentiating.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    denom = pred * pred + REL_L2_EPS
    diff = pred - target
    loss = float(np.mean(diff * diff / denom))
    grad = 2.0 * diff / denom / diff.size
    return loss, grad


def mape(pred, target):
    """Mean of ``|pred - target| / (|target| + 0.01)`` (subgradient 0 at equality)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    denom = np.abs(target) + MAPE_EPS
    diff = pred - target
    loss = float(np.mean(np.abs(diff) / denom))
    grad = np.sign(diff) / denom / diff.size
    return loss, grad


FIDELITY = {"relative_l2": relative_l2, "mape": mape}


def tv_stencil(x, h: float):
    """Stencil points and difference coefficients for the spatial gradient.

    Returns ``points`` of shape ``(N, 2m+1, m)`` (centre, then ``+h e_j`` and
    ``-h e_j`` per axis) and ``coeffs`` of shape ``(N, m, 3)`` weighting the
    (plus, centre, minus) values. Central differences are used unless the
    stencil would leave ``[-1, 1]``, where the one-sided difference is used.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, m = x.shape
    points = np.repeat(x[:, None, :], 2 * m + 1, axis=1)
    coeffs = np.empty((n, m, 3))
    for j in range(m):
        points[:, 1 + 2 * j, j] += h
        points[:, 2 + 2 * j, j] -= h
        hi = x[:, j] + h > 1.0
        lo = x[:, j] - h < -1.0
        c = np.tile([0.5 / h, 0.0, -0.5 / h], (n, 1))
        c[hi] = [0.0, 1.0 / h, -1.0 / h]
        c[lo] = [1.0 / h, -1.0 / h, 0.0]
        coeffs[:, j] = c
    return points, coeffs


def tv_from_values(values, coeffs):
    """Smoothed gradient norm per sample from stencil values.

    ``values`` has shape ``(N, 2m+1, n)``. Returns the per-sample energies
    ``(N,)`` and ``d energy_k / d values`` with the shape of ``values``.
    """
    n_pts, _, _ = values.shape
    m = coeffs.shape[1]
    centre = values[:, 0]
    plus = values[:, 1::2]  # (N, m, n)
    minus = values[:, 2::2]
    grad = (coeffs[:, :, 0:1] * plus + coeffs[:, :, 1:2] * centre[:, None, :]
            + coeffs[:, :, 2:3] * minus)  # (N, m, n)
    energy = np.sqrt(np.sum(grad * grad, axis=(1, 2)) + TV_SMOOTHING)
    unit = grad / energy[:, None, None]
    d_values = np.zeros_like(values)
    d_values[:, 1::2] = coeffs[:, :, 0:1] * unit
    d_values[:, 2::2] = coeffs[:, :, 2:3] * unit
    d_values[:, 0] = np.sum(coeffs[:, :, 1:2] * unit, axis=1)
    return energy, d_values


def tv_energy(field, x, h: float):
    """Finite-difference total-variation energy ``|grad_x f(x)|`` at each point.

    ``field`` is any callable mapping ``(K, m)`` coordinates to ``(K, n)``
    values. Returns ``(energy (N,), d energy / d stencil values (N, 2m+1, n))``.
    """
    points, coeffs = tv_stencil(x, h)
    n, s, m = points.shape
    values = np.asarray(field(points.reshape(n * s, m)), dtype=np.float64)
    values = values.reshape(n, s, -1)
    return tv_from_values(values, coeffs)


@dataclass
class ObjectiveResult:
    loss: float
    fidelity: float
    energy: float
    grads: object  # FieldWeights or AdapterSet


def evaluate_objective(spec: ObjectiveSpec, net: FieldNet, x, target,
                       keep: bool = False):
    """Loss terms and ``d loss / d outputs`` for one batch (no backprop)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64).reshape(x.shape[0], -1)
    if x.shape[0] == 0:
        raise ValueError("objective needs a nonempty batch")
    fid = FIDELITY[spec.fidelity_kind]
    run = net.forward if keep else net
    if spec.kind != "tv_denoise":
        pred = run(x)
        loss, d_pred = fid(pred, target)
        return loss, 0.0, d_pred
    points, coeffs = tv_stencil(x, spec.h)
    n, s, m = points.shape
    values = run(points.reshape(n * s, m)).reshape(n, s, -1)
    fidelity, d_centre = fid(values[:, 0], target)
    energy_per, d_energy = tv_from_values(values, coeffs)
    energy = float(np.mean(energy_per))
    d_values = spec.lam * d_energy / n
    d_values[:, 0] += d_centre
    return fidelity, energy, d_values.reshape(n * s, -1)


def composite_objective(spec: ObjectiveSpec, net: FieldNet, x, target,
                        trainable: str = "full") -> ObjectiveResult:
    """Batch-mean loss and its gradient with respect to the trainable parameters.

    The reported ``loss`` is exactly ``fidelity + lam * energy``.
    """
    fidelity, energy, d_out = evaluate_objective(spec, net, x, target, keep=True)
    grads = net.backward(d_out, trainable)
    return ObjectiveResult(fidelity + spec.lam * energy, fidelity, energy, grads)

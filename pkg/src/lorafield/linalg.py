"""Dense linear algebra, seeded random numbers and the Jacobi SVD.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 (C order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def as_matrix(a) -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def zeros(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius(a) -> float:
    return float(np.sqrt(np.sum(np.square(a))))


# --------------------------------------------------------------------------
# Random numbers
# --------------------------------------------------------------------------


def _splitmix_block(state: int, count: int) -> np.ndarray:
    # SplitMix64 is counter based: output k only depends on state + k*gamma,
    # so a block can be produced without a Python-level loop.
    with np.errstate(over="ignore"):
        k = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(state) + k * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return z


def _splitmix_scalar(x: int) -> int:
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class SeededRng:
    """SplitMix64 generator.

    Identical seeds give identical streams on every platform: the generator
    only uses wrapping 64-bit integer arithmetic. One instance per thread of
    work; use :meth:`spawn` to derive independent child streams.
    """

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK64

    def next_u64(self, count: int) -> np.ndarray:
        out = _splitmix_block(self.state, count)
        self.state = (self.state + count * _GOLDEN) & _MASK64
        return out

    def uniform(self, size=None) -> np.ndarray | float:
        """Doubles in [0, 1) with 53 random bits."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        """Box-Muller normals; each draw consumes two uniforms."""
        n = 1 if size is None else int(np.prod(size))
        u = self.uniform(2 * n)
        radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        z = radius * np.cos(2.0 * np.pi * u[1::2])
        out = mean + std * z
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, high: int, size) -> np.ndarray:
        """Uniform integers in [0, high)."""
        n = int(np.prod(size))
        idx = np.floor(self.uniform(n) * high).astype(np.int64)
        return np.minimum(idx, high - 1).reshape(size)

    def spawn(self, stream: int) -> "SeededRng":
        return SeededRng(_splitmix_scalar(self.state ^ _splitmix_scalar(stream)))


def normal_sample(rng: SeededRng, mean: float, variance: float) -> float:
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    if variance == 0:
        return float(mean)
    return mean + math.sqrt(variance) * rng.normal()


# --------------------------------------------------------------------------
# SVD
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray  # m x k
    sigma: np.ndarray  # k, descending
    vt: np.ndarray  # k x n

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint column pairings covering every pair once per sweep."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        p, q = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        if p:
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _orthonormalize(u: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt (two passes), completing collapsed columns."""
    m, k = u.shape
    out = u.copy()
    for j in range(k):
        q = out[:, :j]
        v = out[:, j].copy()
        for _ in range(2):
            v -= q @ (q.T @ v)
        norm = np.linalg.norm(v)
        if norm < 0.5:
            # column carried (numerically) no direction: take the unit vector
            # with the largest component outside the span so far
            outside = 1.0 - np.einsum("ij,ij->i", q, q)
            v = np.zeros(m)
            v[int(np.argmax(outside))] = 1.0
            for _ in range(2):
                v -= q @ (q.T @ v)
            norm = np.linalg.norm(v)
        out[:, j] = v / norm
    return out


def svd(m, tol: float = 1e-12, max_sweeps: int = 60) -> SvdResult:
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Columns are orthogonalized pairwise in round-robin order; all pairs of a
    round are disjoint, so each round is applied as one vectorized update.
    Iteration stops once no pair needed a rotation, i.e. every
    ``|a_p . a_q| <= tol * |a_p| |a_q|``.
    """
    a = as_matrix(m)
    if min(a.shape) < 1:
        raise ShapeError("svd needs at least one row and one column")
    if not np.all(np.isfinite(a)):
        raise NumericError("svd input has non-finite entries")
    if a.shape[0] < a.shape[1]:
        t = svd(a.T, tol=tol, max_sweeps=max_sweeps)
        return SvdResult(u=t.vt.T.copy(), sigma=t.sigma, vt=t.u.T.copy())

    n = a.shape[1]
    work = a.copy()
    v = np.eye(n)
    rounds = _round_robin(n)
    converged = n == 1
    # columns this small are numerically zero; rotating them only churns noise
    negligible = (np.finfo(np.float64).eps * np.linalg.norm(a)) ** 2
    sweeps = 0
    while not converged:
        if sweeps >= max_sweeps:
            raise NumericError(f"Jacobi SVD did not converge after {sweeps} sweeps")
        sweeps += 1
        rotated = False
        for p, q in rounds:
            wp, wq = work[:, p], work[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha) * np.sqrt(beta)) & (np.minimum(alpha, beta) > negligible)
            if not np.any(active):
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            t[zeta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            wp, wq = work[:, p], work[:, q]
            work[:, p] = c * wp - s * wq
            work[:, q] = s * wp + c * wq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        converged = not rotated

    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]
    u = np.zeros_like(work)
    nz = sigma > 0
    u[:, nz] = work[:, nz] / sigma[nz]
    u = _orthonormalize(u)
    return SvdResult(u=u, sigma=sigma, vt=v.T.copy())


def truncate_svd(s: SvdResult, r: int) -> np.ndarray:
    if not 1 <= r <= len(s.sigma):
        raise ValueError(f"rank {r} outside [1, {len(s.sigma)}]")
    return (s.u[:, :r] * s.sigma[:r]) @ s.vt[:r]

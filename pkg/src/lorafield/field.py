"""Coordinate MLP fields with optional low-rank adapters.

A field is ``MLP(encode(x))``: a frequency encoding followed by linear
layers with ReLU between them. Each linear layer may carry an adapter pair
``(A, B)``; the adapted layer computes ``(W + B A / r_eff) h + b``. Biases
are never adapted.

Batches are row-major: coordinates ``(N, m)``, outputs ``(N, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, StateError
from .linalg import SeededRng

TRAINABLE = ("full", "adapters_only")


@dataclass(frozen=True)
class FieldArchitecture:
    input_dim: int
    encoding_levels: int
    hidden_width: int
    hidden_layers: int
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if min(self.input_dim, self.hidden_width, self.output_dim) < 1:
            raise ValueError("dimensions must be positive")
        if self.hidden_layers < 0 or self.encoding_levels < 0:
            raise ValueError("layer and level counts must be nonnegative")

    @property
    def encoded_dim(self) -> int:
        # L = 0 feeds raw coordinates (used for small test networks)
        if self.encoding_levels == 0:
            return self.input_dim
        return 2 * self.input_dim * self.encoding_levels

    @property
    def num_layers(self) -> int:
        return self.hidden_layers + 2

    def layer_dims(self) -> list[tuple[int, int]]:
        """``(d_in, d_out)`` for every linear layer, input to output."""
        w = self.hidden_width
        dims = [(self.encoded_dim, w)]
        dims += [(w, w)] * self.hidden_layers
        dims.append((w, self.output_dim))
        return dims

    def with_width(self, width: int) -> "FieldArchitecture":
        return FieldArchitecture(self.input_dim, self.encoding_levels, width,
                                 self.hidden_layers, self.output_dim, self.activation)

    @classmethod
    def preset(cls, name: str) -> "FieldArchitecture":
        try:
            return PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown architecture preset {name!r}") from None


PRESETS = {
    "sdf": FieldArchitecture(3, 6, 256, 4, 1),
    "image": FieldArchitecture(2, 10, 256, 5, 3),
    "video": FieldArchitecture(2, 10, 256, 6, 3),
}


@dataclass
class FieldWeights:
    """Per-layer ``W_i`` (d_out x d_in) and ``b_i`` (d_out,)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "FieldWeights":
        return FieldWeights([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "FieldWeights":
        return FieldWeights([np.zeros_like(w) for w in self.weights],
                            [np.zeros_like(b) for b in self.biases])

    def check(self, arch: FieldArchitecture) -> None:
        dims = arch.layer_dims()
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ShapeError(f"expected {len(dims)} layers, got {len(self.weights)}")
        for i, ((d_in, d_out), w, b) in enumerate(zip(dims, self.weights, self.biases)):
            if w.shape != (d_out, d_in) or b.shape != (d_out,):
                raise ShapeError(f"layer {i}: W {w.shape}, b {b.shape}; expected ({d_out}, {d_in})")


@dataclass
class AdapterSet:
    """Per-layer factors ``A_i`` (r_eff x d_in) and ``B_i`` (d_out x r_eff)."""

    a: list[np.ndarray]
    b: list[np.ndarray]
    rank: int

    @property
    def effective_ranks(self) -> list[int]:
        return [a.shape[0] for a in self.a]

    def params(self) -> list[np.ndarray]:
        out = []
        for a, b in zip(self.a, self.b):
            out += [a, b]
        return out

    def copy(self) -> "AdapterSet":
        return AdapterSet([a.copy() for a in self.a], [b.copy() for b in self.b], self.rank)

    def zeros_like(self) -> "AdapterSet":
        return AdapterSet([np.zeros_like(a) for a in self.a],
                          [np.zeros_like(b) for b in self.b], self.rank)

    def delta(self, i: int) -> np.ndarray:
        """The scaled weight update ``B_i A_i / r_eff`` of layer ``i``."""
        return (self.b[i] @ self.a[i]) / self.a[i].shape[0]

    def check(self, arch: FieldArchitecture) -> None:
        dims = arch.layer_dims()
        if len(self.a) != len(dims) or len(self.b) != len(dims):
            raise ShapeError(f"expected {len(dims)} adapter layers, got {len(self.a)}")
        for i, ((d_in, d_out), a, b) in enumerate(zip(dims, self.a, self.b)):
            r = a.shape[0]
            if a.shape != (r, d_in) or b.shape != (d_out, r):
                raise ShapeError(f"adapter {i}: A {a.shape}, B {b.shape} do not fit ({d_out}, {d_in})")
            if r != min(self.rank, d_in, d_out):
                raise ShapeError(f"adapter {i}: effective rank {r} != min({self.rank}, {d_in}, {d_out})")


def frequency_encode(x, levels: int) -> np.ndarray:
    """Encode coordinates as ``sin(2^k x_j), cos(2^k x_j)``.

    Order is level-major, coordinate-minor, sine before cosine. Accepts a
    single coordinate ``(m,)`` or a batch ``(N, m)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if levels == 0:
        out = xb.copy()
    else:
        n, m = xb.shape
        scaled = xb[:, None, :] * (2.0 ** np.arange(levels))[None, :, None]  # (N, L, m)
        out = np.stack([np.sin(scaled), np.cos(scaled)], axis=-1).reshape(n, 2 * m * levels)
    return out[0] if single else out


@dataclass
class _Cache:
    inputs: list[np.ndarray]  # input to each linear layer
    masks: list[np.ndarray]  # ReLU masks of hidden layers
    projected: list[np.ndarray] | None  # h A^T per layer when adapters are attached


class FieldNet:
    """Evaluates a field and back-propagates through the last forward batch."""

    def __init__(self, arch: FieldArchitecture, weights: FieldWeights,
                 adapters: AdapterSet | None = None):
        weights.check(arch)
        if adapters is not None:
            adapters.check(arch)
        self.arch = arch
        self.weights = weights
        self.adapters = adapters
        self.out_of_range = 0
        self._cache: _Cache | None = None

    def __call__(self, x) -> np.ndarray:
        return self._run(x, keep=False)

    def forward(self, x) -> np.ndarray:
        """Evaluate and keep the activations needed by :meth:`backward`."""
        return self._run(x, keep=True)

    def _run(self, x, keep: bool) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        if xb.shape[1] != self.arch.input_dim:
            raise ShapeError(f"coordinates have dim {xb.shape[1]}, field expects {self.arch.input_dim}")
        self.out_of_range = int(np.count_nonzero(np.any(np.abs(xb) > 1.0, axis=1)))

        h = frequency_encode(xb, self.arch.encoding_levels)
        inputs, masks, projected = [], [], []
        last = self.arch.num_layers - 1
        ad = self.adapters
        for i, (w, b) in enumerate(zip(self.weights.weights, self.weights.biases)):
            inputs.append(h)
            z = h @ w.T + b
            if ad is not None:
                u = h @ ad.a[i].T
                projected.append(u)
                z = z + (u @ ad.b[i].T) / ad.a[i].shape[0]
            if i < last:
                mask = z > 0
                masks.append(mask)
                h = np.where(mask, z, 0.0)
            else:
                h = z
        if keep:
            self._cache = _Cache(inputs, masks, projected if ad is not None else None)
        return h[0] if single else h

    def backward(self, grad_out, trainable: str = "full"):
        """Gradients of a scalar loss given ``d loss / d outputs``.

        ``trainable="full"`` returns a :class:`FieldWeights` of gradients for
        every ``W_i, b_i``; ``"adapters_only"`` returns an :class:`AdapterSet`
        of gradients for ``A_i, B_i`` (the base weights are treated as frozen
        but gradients still flow through them).
        """
        if trainable not in TRAINABLE:
            raise ValueError(f"trainable must be one of {TRAINABLE}")
        cache = self._cache
        if cache is None:
            raise StateError("backward called before forward")
        ad = self.adapters
        if trainable == "adapters_only" and ad is None:
            raise StateError("adapters_only gradients requested on a field without adapters")
        g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        if g.shape != (cache.inputs[0].shape[0], self.arch.output_dim):
            raise ShapeError(f"upstream gradient shape {g.shape} does not match last batch")

        n_layers = self.arch.num_layers
        grads_w = [None] * n_layers
        grads_b = [None] * n_layers
        for i in reversed(range(n_layers)):
            if i < n_layers - 1:
                g = g * cache.masks[i]
            h = cache.inputs[i]
            w = self.weights.weights[i]
            if ad is not None:
                r = ad.a[i].shape[0]
                gb_proj = g @ ad.b[i]  # (N, r)
            if trainable == "full":
                grads_w[i] = g.T @ h
                grads_b[i] = g.sum(axis=0)
            else:
                grads_w[i] = (gb_proj.T @ h) / r  # d/dA
                grads_b[i] = (g.T @ cache.projected[i]) / r  # d/dB
            if i > 0:
                g_in = g @ w
                if ad is not None:
                    g_in = g_in + (gb_proj @ ad.a[i]) / r
                g = g_in
        if trainable == "full":
            return FieldWeights(grads_w, grads_b)
        return AdapterSet(grads_w, grads_b, ad.rank)


def forward(arch: FieldArchitecture, weights: FieldWeights, x,
            adapters: AdapterSet | None = None) -> np.ndarray:
    return FieldNet(arch, weights, adapters)(x)


def init_base(arch: FieldArchitecture, rng: SeededRng) -> FieldWeights:
    """Kaiming normal weights (variance 2 / d_in), zero biases."""
    ws, bs = [], []
    for d_in, d_out in arch.layer_dims():
        ws.append(rng.normal((d_out, d_in), std=np.sqrt(2.0 / d_in)))
        bs.append(np.zeros(d_out))
    return FieldWeights(ws, bs)


def init_adapters(arch: FieldArchitecture, rank: int, rng: SeededRng) -> AdapterSet:
    """A ~ N(0, 1/d_in), B = 0, with per-layer rank capped at min(r, d_in, d_out)."""
    if rank < 1:
        raise ValueError("adapter rank must be >= 1")
    a_list, b_list = [], []
    for d_in, d_out in arch.layer_dims():
        r = min(rank, d_in, d_out)
        a_list.append(rng.normal((r, d_in), std=np.sqrt(1.0 / d_in)))
        b_list.append(np.zeros((d_out, r)))
    return AdapterSet(a_list, b_list, rank)


def merge_adapters(weights: FieldWeights, adapters: AdapterSet) -> FieldWeights:
    if len(weights.weights) != len(adapters.a):
        raise ShapeError("adapter layer count does not match weights")
    merged = []
    for i, w in enumerate(weights.weights):
        d = adapters.delta(i)
        if d.shape != w.shape:
            raise ShapeError(f"layer {i}: adapter update {d.shape} vs weight {w.shape}")
        merged.append(w + d)
    return FieldWeights(merged, [b.copy() for b in weights.biases])


def count_params(obj) -> int:
    """Trainable scalars of an architecture (weights + biases) or adapter set.

    For an :class:`AdapterSet` the count is ``sum r_eff (d_in + d_out)``.
    """
    if isinstance(obj, FieldArchitecture):
        return sum(d_in * d_out + d_out for d_in, d_out in obj.layer_dims())
    if isinstance(obj, AdapterSet):
        return sum(a.size + b.size for a, b in zip(obj.a, obj.b))
    if isinstance(obj, FieldWeights):
        return sum(p.size for p in obj.params())
    raise TypeError(f"cannot count parameters of {type(obj).__name__}")


def adapter_param_count(arch: FieldArchitecture, rank: int) -> int:
    """Closed-form ``sum_i min(r, d_in, d_out) (d_in + d_out)``."""
    return sum(min(rank, d_in, d_out) * (d_in + d_out) for d_in, d_out in arch.layer_dims())

"""Adam optimization of base fields, full fine-tuning, adapters and sequences."""

from __future__ import annotations

import contextlib
import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import TrainingError
from .field import (AdapterSet, FieldArchitecture, FieldNet, FieldWeights,
                    init_adapters, init_base, merge_adapters)
from .linalg import SeededRng
from .metrics import psnr, render_image
from .objectives import ObjectiveSpec, evaluate_objective, composite_objective
from .samplers import (FrameSequence, RasterImage, Sdf, image_grid,
                       sample_image_batch, sample_sdf_batch)
from .serialization import BaseCheckpoint, decode_frame_weights, round_to_storage

BASE_LR = 1e-4
FINETUNE_LR = 1e-4
LORA_LR = 5e-3
MAX_STEPS = 30_000


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = BASE_LR
    max_steps: int = MAX_STEPS
    batch_size: int = 4096
    improvement_window: int = 2000
    improvement_threshold: float = 1e-4
    eval_every: int = 500
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    log_path: str | None = None
    log_every: int = 100

    @classmethod
    def for_lora(cls, **kw) -> "TrainConfig":
        return cls(**{"learning_rate": LORA_LR, **kw})

    @classmethod
    def for_finetune(cls, **kw) -> "TrainConfig":
        return cls(**{"learning_rate": FINETUNE_LR, **kw})

    def but(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update applied in place; returns ``(params, state)``."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"parameter {p.shape} and gradient {g.shape} differ")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


# --------------------------------------------------------------------------
# Data sources
# --------------------------------------------------------------------------


class ImageData:
    modality = "image"
    fidelity = "relative_l2"

    def __init__(self, image: RasterImage):
        self.image = image
        self._grid = image_grid(image)

    @property
    def output_dim(self) -> int:
        return self.image.channels

    def batch(self, count: int, rng: SeededRng):
        return sample_image_batch(self.image, count, rng)

    def eval_batch(self):
        return self._grid


class SdfData:
    modality = "sdf"
    fidelity = "mape"
    output_dim = 1

    def __init__(self, source: Sdf, surface_fraction: float = 0.5, eval_samples: int = 16384,
                 seed: int = 1234):
        self.source = source
        self.surface_fraction = surface_fraction
        self._eval = sample_sdf_batch(source, eval_samples, SeededRng(seed), surface_fraction)

    def batch(self, count: int, rng: SeededRng):
        return sample_sdf_batch(self.source, count, rng, self.surface_fraction)

    def eval_batch(self):
        return self._eval


def as_data(target):
    if isinstance(target, RasterImage):
        return ImageData(target)
    if isinstance(target, Sdf):
        return SdfData(target)
    return target


def default_objective(data) -> ObjectiveSpec:
    return ObjectiveSpec(kind=data.fidelity)


# --------------------------------------------------------------------------
# Optimization loop
# --------------------------------------------------------------------------


@dataclass
class TrainResult:
    steps: int
    best_eval: float
    initial_eval: float
    best_step: int
    best_train_loss: float
    stop_reason: str
    seconds: float
    history: list = field(default_factory=list)  # (step, loss, fidelity, energy, elapsed)
    evals: list = field(default_factory=list)  # (step, eval loss)


class _CsvLog:
    COLUMNS = ["step", "loss", "fidelity", "energy", "elapsed"]

    def __init__(self, path):
        self.fh = None
        if path is not None:
            path = Path(path)
            fresh = not path.exists()
            self.fh = path.open("a", newline="")
            self.writer = csv.writer(self.fh)
            if fresh:
                self.writer.writerow(self.COLUMNS)

    def row(self, *values):
        if self.fh is not None:
            self.writer.writerow(values)

    def close(self):
        if self.fh is not None:
            self.fh.close()


def _eval_loss(objective, net, data) -> float:
    x, t = data.eval_batch()
    fid, energy, _ = evaluate_objective(objective, net, x, t)
    return fid + objective.lam * energy


def optimize(net: FieldNet, trainable: str, data, objective: ObjectiveSpec,
             config: TrainConfig, rng: SeededRng) -> TrainResult:
    """Run Adam on the trainable parameters of ``net`` in place.

    Stops after ``max_steps`` or when the best evaluation loss has not
    improved by a relative ``improvement_threshold`` for
    ``improvement_window`` steps. The parameters with the lowest evaluation
    loss seen (including the starting point) are restored at the end.
    """
    params_obj = net.weights if trainable == "full" else net.adapters
    params = params_obj.params()
    state = AdamState.zeros(params)
    log = _CsvLog(config.log_path)
    start = time.perf_counter()

    best_eval = initial = _eval_loss(objective, net, data)
    if not np.isfinite(best_eval):
        raise TrainingError("initial evaluation loss is not finite", last_finite_step=None)
    best_params = [p.copy() for p in params]
    best_step = 0
    window_ref, window_step = best_eval, 0
    best_train = np.inf
    evals = [(0, best_eval)]
    history = []
    step = 0
    reason = "max_steps"
    # non-finite values are caught explicitly below
    quiet = np.errstate(over="ignore", invalid="ignore", divide="ignore")
    with quiet, contextlib.closing(log):
        for step in range(1, config.max_steps + 1):
            x, t = data.batch(config.batch_size, rng)
            res = composite_objective(objective, net, x, t, trainable)
            if not np.isfinite(res.loss) or not all(np.all(np.isfinite(g)) for g in res.grads.params()):
                raise TrainingError(f"loss diverged at step {step}", last_finite_step=step - 1)
            best_train = min(best_train, res.loss)
            adam_step(params, res.grads.params(), state, config.learning_rate,
                      config.beta1, config.beta2, config.epsilon)
            elapsed = time.perf_counter() - start
            if step % config.log_every == 0:
                history.append((step, res.loss, res.fidelity, res.energy, elapsed))
                log.row(step, res.loss, res.fidelity, res.energy, elapsed)
            if step % config.eval_every == 0 or step == config.max_steps:
                ev = _eval_loss(objective, net, data)
                if not np.isfinite(ev):
                    raise TrainingError(f"evaluation loss diverged at step {step}",
                                        last_finite_step=step - 1)
                evals.append((step, ev))
                if ev < best_eval:
                    best_eval, best_step = ev, step
                    best_params = [p.copy() for p in params]
                if ev < window_ref * (1.0 - config.improvement_threshold):
                    window_ref, window_step = ev, step
                if step - window_step >= config.improvement_window:
                    reason = "converged"
                    break
    for p, b in zip(params, best_params):
        p[...] = b
    return TrainResult(step, best_eval, initial, best_step, float(best_train), reason,
                       time.perf_counter() - start, history, evals)


# --------------------------------------------------------------------------
# Pipelines
# --------------------------------------------------------------------------


def train_base(arch: FieldArchitecture, data, config: TrainConfig | None = None,
               objective: ObjectiveSpec | None = None) -> BaseCheckpoint:
    """Overfit a freshly initialized field to one instance."""
    data = as_data(data)
    config = config or TrainConfig()
    rng = SeededRng(config.seed)
    weights = init_base(arch, rng.spawn(1))
    net = FieldNet(arch, weights)
    result = optimize(net, "full", data, objective or default_objective(data), config, rng.spawn(2))
    round_to_storage(weights.params())
    return BaseCheckpoint(arch, weights, result)


def _base_parts(base):
    if isinstance(base, BaseCheckpoint):
        return base.arch, base.weights
    return base


def fit_lora(base, data, rank: int, config: TrainConfig | None = None,
             objective: ObjectiveSpec | None = None):
    """Train adapters on a frozen base; returns ``(AdapterSet, TrainResult)``.

    ``base`` is a :class:`BaseCheckpoint` or an ``(arch, weights)`` pair.
    """
    if rank < 1:
        raise ValueError("adapter rank must be >= 1")
    arch, weights = _base_parts(base)
    data = as_data(data)
    config = config or TrainConfig.for_lora()
    rng = SeededRng(config.seed)
    adapters = init_adapters(arch, rank, rng.spawn(3))
    net = FieldNet(arch, weights, adapters)
    result = optimize(net, "adapters_only", data, objective or default_objective(data),
                      config, rng.spawn(4))
    round_to_storage(adapters.params())
    return adapters, result


def train_lora(base, data, rank: int, config: TrainConfig | None = None,
               objective: ObjectiveSpec | None = None) -> AdapterSet:
    return fit_lora(base, data, rank, config, objective)[0]


def fit_finetune(base, data, config: TrainConfig | None = None,
                 objective: ObjectiveSpec | None = None):
    """Re-optimize every weight of a copy of the base; ``(FieldWeights, TrainResult)``."""
    arch, weights = _base_parts(base)
    data = as_data(data)
    config = config or TrainConfig.for_finetune()
    weights = weights.copy()
    net = FieldNet(arch, weights)
    result = optimize(net, "full", data, objective or default_objective(data),
                      config, SeededRng(config.seed).spawn(5))
    round_to_storage(weights.params())
    return weights, result


def full_finetune(base, data, config: TrainConfig | None = None,
                  objective: ObjectiveSpec | None = None) -> FieldWeights:
    return fit_finetune(base, data, config, objective)[0]


# --------------------------------------------------------------------------
# Sequences
# --------------------------------------------------------------------------


@dataclass
class SequentialEncoding:
    """A base checkpoint for frame 1 plus one adapter set per later frame.

    In ``sequential`` mode frame ``k`` decodes as the base with adapters
    ``2..k`` merged in order; in ``parallel`` mode only adapter ``k`` is
    merged into the base.
    """

    base: BaseCheckpoint
    adapters: list[AdapterSet]
    mode: str
    frame_psnr: list[float] = field(default_factory=list)

    @property
    def frames(self) -> int:
        return len(self.adapters) + 1

    def decode_weights(self, k: int) -> FieldWeights:
        return decode_frame_weights(self.base.weights, self.adapters, k, self.mode)

    def decode(self, k: int, height: int, width: int, channels: int = 3) -> RasterImage:
        net = FieldNet(self.base.arch, self.decode_weights(k))
        return render_image(net, height, width, channels)


def encode_sequence(seq: FrameSequence, rank: int, arch: FieldArchitecture | None = None,
                    base_config: TrainConfig | None = None,
                    lora_config: TrainConfig | None = None,
                    mode: str = "sequential", base: BaseCheckpoint | None = None,
                    progress=None) -> SequentialEncoding:
    """Encode frame 1 as a base field and every later frame as an adapter.

    Sequential mode trains frame ``k``'s adapter on the weights of frame
    ``k - 1`` (earlier adapters merged, i.e. frozen); parallel mode trains
    each adapter independently against the frame-1 base.
    """
    if mode not in ("sequential", "parallel"):
        raise ValueError(f"unknown sequence mode {mode!r}")
    if len(seq) < 2:
        raise ValueError("sequence needs at least two frames")
    arch = arch or FieldArchitecture.preset("video")
    lora_config = lora_config or TrainConfig.for_lora()
    first = seq[0]
    if base is None:
        base = train_base(arch, first, base_config)
    enc = SequentialEncoding(base, [], mode)
    h, w, c = first.height, first.width, first.channels
    enc.frame_psnr.append(psnr(render_image(FieldNet(arch, base.weights), h, w, c), first))
    working = base.weights
    for k in range(2, len(seq) + 1):
        frame = seq[k - 1]
        cfg = lora_config.but(seed=lora_config.seed + k)
        start = base.weights if mode == "parallel" else working
        try:
            adapters, _ = fit_lora((arch, start), frame, rank, cfg)
        except TrainingError as exc:
            raise TrainingError(f"frame {k}: {exc}", last_finite_step=exc.last_finite_step,
                                frame=k, partial=enc) from exc
        enc.adapters.append(adapters)
        if mode == "sequential":
            working = merge_adapters(working, adapters)
        enc.frame_psnr.append(psnr(enc.decode(k, h, w, c), frame))
        if progress is not None:
            progress(k, enc.frame_psnr[-1])
    return enc

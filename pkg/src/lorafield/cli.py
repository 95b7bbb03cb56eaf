"""Command-line entry point: ``lorafield <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import plotting
from .baselines import (chambolle_denoise, collect_layer_inputs,
                        lowrank_error_curve, small_mlp_arch, svd_baseline,
                        weighted_svd_baseline, write_error_curve)
from .errors import DataError, LoraFieldError
from .field import (FieldArchitecture, FieldNet, count_params, merge_adapters)
from .linalg import SeededRng
from .metrics import (MetricRow, eval_field_image, iou, render_image,
                      write_report)
from .objectives import DEFAULT_TV_LAMBDA, ObjectiveSpec, mape
from .samplers import (FrameSequence, RasterImage, SampleFileSdf,
                       gaussian_lowfreq_edit, uniform_box)
from .serialization import (BaseCheckpoint, load_adapters, load_bundle,
                            load_checkpoint, round_to_storage, save_adapters,
                            save_bundle, save_checkpoint)
from .training import (MAX_STEPS, ImageData, TrainConfig, encode_sequence,
                       fit_finetune, fit_lora, train_base)


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def _modality_of(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head.startswith(b"SDFS"):
        return "sdf"
    if head[:2] in (b"P5", b"P6"):
        return "image"
    raise DataError(f"{path}: neither a Netpbm image nor an SDFS sample file")


def _load_target(path, expect: str | None = None):
    kind = _modality_of(path)
    if expect is not None and kind != expect:
        raise DataError(f"{path} holds {kind} data but {expect} was expected")
    if kind == "sdf":
        return SampleFileSdf.read(path)
    return RasterImage.read(path)


def _modality_of_arch(arch: FieldArchitecture) -> str:
    return "sdf" if arch.input_dim == 3 else "image"


def _check_compatible(arch: FieldArchitecture, target) -> None:
    if isinstance(target, RasterImage):
        if arch.input_dim != 2 or arch.output_dim != target.channels:
            raise DataError(f"architecture ({arch.input_dim} -> {arch.output_dim}) cannot fit a "
                            f"{target.channels}-channel image")
    elif arch.input_dim != 3 or arch.output_dim != 1:
        raise DataError(f"architecture ({arch.input_dim} -> {arch.output_dim}) cannot fit an SDF")


def _parse_ranks(text: str) -> list[int]:
    try:
        ranks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rank list {text!r}") from None
    if not ranks or min(ranks) < 1:
        raise argparse.ArgumentTypeError("ranks must be positive integers")
    return ranks


def _config(args, lora: bool = False) -> TrainConfig:
    # base fitting and full fine-tuning share the same default rate
    base = TrainConfig.for_lora() if lora else TrainConfig()
    kw = {"seed": args.seed, "max_steps": args.steps, "batch_size": args.batch_size,
          "eval_every": args.eval_every, "improvement_window": args.window,
          "log_path": args.log}
    if args.lr is not None:
        kw["learning_rate"] = args.lr
    return base.but(**kw)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _probe(arch: FieldArchitecture, n: int, seed: int) -> np.ndarray:
    return uniform_box(n, SeededRng(seed), arch.input_dim)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_train_base(args) -> None:
    target = _load_target(args.input, args.modality)
    arch = FieldArchitecture.preset(args.arch_preset or args.modality)
    if isinstance(target, RasterImage) and arch.input_dim == 2:
        arch = dataclasses.replace(arch, output_dim=target.channels)
    _check_compatible(arch, target)
    ck = train_base(arch, target, _config(args))
    save_checkpoint(args.out, ck)
    r = ck.train_result
    _say(f"trained {r.steps} steps ({r.stop_reason}); best eval loss {r.best_eval:.6g}")


def _objective(args, target) -> ObjectiveSpec | None:
    if args.objective == "fidelity":
        return None
    if not isinstance(target, RasterImage):
        raise DataError("the tv objective needs an image target")
    return ObjectiveSpec("tv_denoise", lam=args.lam, h=1.0 / max(target.height, target.width))


def cmd_train_lora(args) -> None:
    base = load_checkpoint(args.base)
    target = _load_target(args.target)
    _check_compatible(base.arch, target)
    ad, res = fit_lora(base, target, args.rank, _config(args, lora=True), _objective(args, target))
    save_adapters(args.out, ad, base)
    _say(f"rank {args.rank}: {count_params(ad)} adapter parameters; best eval loss "
         f"{res.best_eval:.6g} after {res.steps} steps")


def cmd_finetune(args) -> None:
    base = load_checkpoint(args.base)
    target = _load_target(args.target)
    _check_compatible(base.arch, target)
    weights, res = fit_finetune(base, target, _config(args))
    save_checkpoint(args.out, BaseCheckpoint(base.arch, weights))
    _say(f"fine-tuned {res.steps} steps; best eval loss {res.best_eval:.6g}")


def _adapted_weights(base: BaseCheckpoint, adapter_paths, force: bool):
    weights, params = base.weights, 0
    for path in adapter_paths:
        ad = load_adapters(path, base, force=force)
        weights = merge_adapters(weights, ad)
        params += count_params(ad)
    return weights, params


def cmd_eval(args) -> None:
    base = load_checkpoint(args.base)
    reference = _load_target(args.reference)
    _check_compatible(base.arch, reference)
    weights, adapter_params = _adapted_weights(base, args.adapter or [], args.force)
    net = FieldNet(base.arch, weights)
    method = "lora" if args.adapter else "base"
    params = adapter_params if args.adapter else count_params(base.arch)
    start = time.perf_counter()
    if isinstance(reference, RasterImage):
        img, rows = eval_field_image(net, reference, args.experiment, method, None, params,
                                     args.seed)
        if args.render:
            img.write(args.render)
    else:
        pred = net(reference.points)[:, 0]
        err = mape(pred, reference.distances)[0]
        score = iou(net, reference, args.iou_samples, SeededRng(args.seed))
        rows = [MetricRow(args.experiment, method, None, params, "mape", err, args.seed),
                MetricRow(args.experiment, method, None, params, "iou", score, args.seed)]
    seconds = time.perf_counter() - start
    rows = [dataclasses.replace(r, seconds=seconds) for r in rows]
    write_report(args.report, rows, append=args.append)
    plotting.plot_metric_bars(rows, plotting.figure_path(args.report))
    for r in rows:
        print(f"{r.method},{r.metric},{r.value!r}")


def cmd_svd_baseline(args) -> None:
    base = load_checkpoint(args.base)
    ft = load_checkpoint(args.finetuned)
    if ft.arch != base.arch:
        raise DataError("base and fine-tuned checkpoints have different architectures")
    if args.mode == "plain":
        weights = svd_baseline(base.weights, ft.weights, args.rank)
    else:
        stats = collect_layer_inputs(base.weights, base.arch,
                                     _probe(base.arch, args.probe_samples, args.seed))
        weights = weighted_svd_baseline(base.weights, ft.weights, args.rank, stats)
    round_to_storage(weights.params())
    save_checkpoint(args.out, BaseCheckpoint(base.arch, weights))


def cmd_error_curve(args) -> None:
    base = load_checkpoint(args.base)
    ft = load_checkpoint(args.finetuned)
    if ft.arch != base.arch:
        raise DataError("base and fine-tuned checkpoints have different architectures")
    stats = collect_layer_inputs(base.weights, base.arch,
                                 _probe(base.arch, args.probe_samples, args.seed))
    rows = lowrank_error_curve(base.weights, ft.weights, stats, args.ranks)
    write_error_curve(args.out, rows)
    plotting.plot_error_curve(rows, plotting.figure_path(args.out))


def cmd_denoise_tv(args) -> None:
    base = load_checkpoint(args.base)
    if _modality_of_arch(base.arch) != "image":
        raise DataError("TV denoising applies to image fields")
    if args.target:
        target = _load_target(args.target, "image")
    else:
        # the base's own (noisy) reconstruction is the fidelity target
        target = render_image(FieldNet(base.arch, base.weights), args.resolution,
                              args.resolution, base.arch.output_dim)
    _check_compatible(base.arch, target)
    spec = ObjectiveSpec("tv_denoise", lam=args.lam, h=1.0 / max(target.height, target.width))
    ad, res = fit_lora(base, ImageData(target), args.rank, _config(args, lora=True), spec)
    save_adapters(args.out, ad, base)
    _say(f"TV adapter: best eval objective {res.best_eval:.6g} after {res.steps} steps")


def cmd_chambolle(args) -> None:
    img = RasterImage.read(args.input)
    chambolle_denoise(img, args.lam, args.iterations, args.tau).write(args.out)


def cmd_video_encode(args) -> None:
    seq = FrameSequence.read_dir(args.frames)
    arch = FieldArchitecture.preset(args.arch_preset)
    arch = dataclasses.replace(arch, output_dim=seq[0].channels)
    lora_cfg = _config(args, lora=True)
    if args.lora_lr is not None:
        lora_cfg = lora_cfg.but(learning_rate=args.lora_lr)
    enc = encode_sequence(seq, args.rank, arch, _config(args), lora_cfg, args.mode,
                          progress=lambda k, p: _say(f"frame {k}: {p:.2f} dB"))
    f0 = seq[0]
    save_bundle(args.out, enc, {"height": f0.height, "width": f0.width, "channels": f0.channels})
    plotting.plot_frame_psnr(enc.frame_psnr, Path(args.out) / "psnr.png")


def cmd_video_decode(args) -> None:
    enc, manifest = load_bundle(args.bundle)
    try:
        h, w, c = manifest["height"], manifest["width"], manifest["channels"]
    except KeyError:
        raise DataError("bundle manifest lacks the frame size") from None
    enc.decode(args.frame, h, w, c).write(args.out)


def cmd_edit_gaussian(args) -> None:
    img = RasterImage.read(args.input)
    gaussian_lowfreq_edit(img, args.sigma, args.blur, args.k, SeededRng(args.seed)).write(args.out)


def cmd_rank_sweep(args) -> None:
    base = load_checkpoint(args.base)
    target = _load_target(args.target, "image")
    _check_compatible(base.arch, target)
    rows = []
    for r in args.ranks:
        start = time.perf_counter()
        ad, _ = fit_lora(base, target, r, _config(args, lora=True))
        net = FieldNet(base.arch, base.weights, ad)
        _, got = eval_field_image(net, target, "rank-sweep", "lora", r, count_params(ad), args.seed)
        seconds = time.perf_counter() - start
        rows += [dataclasses.replace(row, seconds=seconds) for row in got]
        _say(f"rank {r}: {got[0].value:.2f} dB")
    write_report(args.report, rows)
    plotting.plot_rank_sweep(rows, plotting.figure_path(args.report))


def cmd_small_mlp(args) -> None:
    target = _load_target(args.target)
    preset = args.arch_preset or ("sdf" if isinstance(target, SampleFileSdf) else "image")
    reference = FieldArchitecture.preset(preset)
    if isinstance(target, RasterImage):
        reference = dataclasses.replace(reference, output_dim=target.channels)
    _check_compatible(reference, target)
    ad = load_adapters(args.reference_adapter)
    ad.check(reference)
    arch = small_mlp_arch(count_params(ad), reference)
    ck = train_base(arch, target, _config(args))
    save_checkpoint(args.out, ck)
    _say(f"width {arch.hidden_width}: {count_params(arch)} parameters "
         f"(adapter: {count_params(ad)})")


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _training_flags(p, steps: int = MAX_STEPS) -> None:
    g = p.add_argument_group("optimization")
    g.add_argument("--steps", type=int, default=steps, help="maximum Adam steps")
    g.add_argument("--lr", type=float, default=None, help="learning rate (default per method)")
    g.add_argument("--batch-size", type=int, default=4096)
    g.add_argument("--eval-every", type=int, default=500)
    g.add_argument("--window", type=int, default=2000, help="improvement window in steps")
    g.add_argument("--log", default=None, help="append progress rows to this CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lorafield",
                                     description="Neural fields with low-rank adapters.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kw):
        p = sub.add_parser(name, parents=[common], **kw)
        p.set_defaults(func=func)
        return p

    p = add("train-base", cmd_train_base, help="fit a field to an image or SDF samples")
    p.add_argument("--modality", choices=["image", "sdf"], required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--arch-preset", choices=["sdf", "image", "video"])
    _training_flags(p)

    p = add("train-lora", cmd_train_lora, help="train adapters on a frozen base")
    p.add_argument("--base", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--objective", choices=["fidelity", "tv"], default="fidelity")
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_TV_LAMBDA)
    _training_flags(p)

    p = add("finetune", cmd_finetune, help="re-optimize every weight of a base")
    p.add_argument("--base", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    _training_flags(p)

    p = add("eval", cmd_eval, help="score a base (plus adapters) against a reference")
    p.add_argument("--base", required=True)
    p.add_argument("--adapter", action="append", help="adapter file; repeat to compose in order")
    p.add_argument("--reference", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--render", help="write the rendered image here (images only)")
    p.add_argument("--experiment", default="eval")
    p.add_argument("--append", action="store_true", help="append to an existing report")
    p.add_argument("--iou-samples", type=int, default=1_000_000)
    p.add_argument("--force", action="store_true", help="accept adapters trained on another base")

    p = add("svd-baseline", cmd_svd_baseline, help="low-rank factorization of a fine-tuned update")
    p.add_argument("--base", required=True)
    p.add_argument("--finetuned", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--mode", choices=["plain", "weighted"], default="plain")
    p.add_argument("--probe-samples", type=int, default=4096)
    p.add_argument("--out", required=True)

    p = add("error-curve", cmd_error_curve, help="per-layer factorization error against rank")
    p.add_argument("--base", required=True)
    p.add_argument("--finetuned", required=True)
    p.add_argument("--ranks", type=_parse_ranks, default=_parse_ranks("1,2,4,8,16,32,64"))
    p.add_argument("--probe-samples", type=int, default=4096)
    p.add_argument("--out", required=True)

    p = add("denoise-tv", cmd_denoise_tv, help="TV-regularized adapter on an image field")
    p.add_argument("--base", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_TV_LAMBDA)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", help="noisy image to stay close to (default: the base's render)")
    p.add_argument("--resolution", type=int, default=64, help="render size when no --target")
    _training_flags(p)

    p = add("chambolle", cmd_chambolle, help="Chambolle TV denoising of a raster image")
    p.add_argument("--input", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--tau", type=float, default=0.125)
    p.add_argument("--out", required=True)

    video = sub.add_parser("video", help="encode or decode frame sequences")
    vsub = video.add_subparsers(dest="video_command", required=True)
    p = vsub.add_parser("encode", parents=[common])
    p.set_defaults(func=cmd_video_encode)
    p.add_argument("--frames", required=True, help="directory of Netpbm frames")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--mode", choices=["sequential", "parallel"], default="sequential")
    p.add_argument("--out", required=True)
    p.add_argument("--arch-preset", choices=["image", "video"], default="video")
    p.add_argument("--lora-lr", type=float, default=None,
                   help="adapter learning rate (--lr sets the frame-1 rate)")
    _training_flags(p)
    p = vsub.add_parser("decode", parents=[common])
    p.set_defaults(func=cmd_video_decode)
    p.add_argument("--bundle", required=True)
    p.add_argument("--frame", type=int, required=True, help="1-based frame index")
    p.add_argument("--out", required=True)

    edit = sub.add_parser("edit", help="synthetic edits of images")
    esub = edit.add_subparsers(dest="edit_command", required=True)
    p = esub.add_parser("gaussian", parents=[common])
    p.set_defaults(func=cmd_edit_gaussian)
    p.add_argument("--input", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--blur", type=float, required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--out", required=True)

    p = add("rank-sweep", cmd_rank_sweep, help="LoRA quality across ranks")
    p.add_argument("--base", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--ranks", type=_parse_ranks, required=True)
    p.add_argument("--report", required=True)
    _training_flags(p)

    p = add("small-mlp-baseline", cmd_small_mlp,
            help="narrow network with as many parameters as an adapter")
    p.add_argument("--reference-adapter", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--arch-preset", choices=["sdf", "image", "video"])
    _training_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (LoraFieldError, OSError, ValueError, IndexError) as exc:
        print(f"lorafield {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

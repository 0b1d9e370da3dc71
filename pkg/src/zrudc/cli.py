"""Command-line entry point: ``zrudc <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error (bad flags, missing files), 2 runtime
error (decode failure, divergence). Every error prints one line to stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .classical import DehazeConfig, baseline
from .gridnet import DEFAULT_WIDTHS
from .imageio import ImageIOError, load_image, save_image
from .losses import LossWeights
from .metrics import psnr, ssim
from .slicing import enhance
from .synthetic import DegradeConfig, clean_scene, degrade, seeded_rng
from .trainer import (
    EmptyDatasetError,
    TrainConfig,
    TrainingDivergedError,
    ablate,
    dataset_paths,
    format_ablation,
    load_dataset,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad invocation detected after argument parsing (exit 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def pool_kernel(value: str) -> int | None:
    if value.lower() == "none":
        return None
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"pool kernel must be 'none' or a positive integer, got {value!r}")
    if k < 1:
        raise argparse.ArgumentTypeError(f"pool kernel must be positive, got {k}")
    return k


def int_list(value: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")
    if not widths or min(widths) < 1:
        raise argparse.ArgumentTypeError(f"widths must be positive, got {value!r}")
    return widths


def float_triple(value: str) -> tuple[float, float, float]:
    parts = value.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {value!r}")
    return tuple(float(p) for p in parts)


def _config(factory, **kwargs):
    """Build a config dataclass, reporting rejected flag values as usage errors."""
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _existing_input(path: Path) -> Path:
    if not path.exists():
        raise UsageError(f"input not found: {path}")
    return path


def _read_params(path: Path):
    if not path.exists():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _add_weight_flags(p: argparse.ArgumentParser) -> None:
    d = LossWeights()
    p.add_argument("--w-dcp", type=float, default=d.w_dcp, help="weight of the dark channel loss")
    p.add_argument("--w-lle", type=float, default=d.w_lle, help="weight of the low-light group")
    p.add_argument("--w-dbc", type=float, default=d.w_dbc, help="weight of the dark/bright channel loss")
    p.add_argument("--w-spa", type=float, default=d.w_spa, help="spatial consistency weight inside the low-light group")
    p.add_argument("--w-exp", type=float, default=d.w_exp, help="exposure weight inside the low-light group")
    p.add_argument("--w-cc", type=float, default=d.w_cc, help="colour constancy weight inside the low-light group")
    p.add_argument("--w-tv", type=float, default=d.w_tv, help="grid smoothness weight inside the low-light group")


def _add_train_flags(p: argparse.ArgumentParser, epochs: int) -> None:
    d = TrainConfig()
    p.add_argument("--data-dir", type=Path, required=True, help="directory of .png/.ppm training images")
    p.add_argument("--epochs", type=int, default=epochs, help="passes over the data")
    p.add_argument("--lr", type=float, default=d.lr, help="Adam learning rate")
    p.add_argument("--batch", type=int, default=d.batch_size, help="images per optimiser step")
    p.add_argument("--seed", type=int, default=d.seed, help="seed for initialisation and crops")
    p.add_argument("--crop", type=int, default=d.crop, help="training crop side in pixels")
    p.add_argument("--widths", type=int_list, default=DEFAULT_WIDTHS, help="U-Net channel widths, comma separated")
    p.add_argument("--max-steps", type=int, default=None, help="stop after this many optimiser steps")
    _add_weight_flags(p)


def _train_config(args, pool: int | None) -> TrainConfig:
    weights = _config(
        LossWeights,
        w_dcp=args.w_dcp,
        w_lle=args.w_lle,
        w_dbc=args.w_dbc,
        w_spa=args.w_spa,
        w_exp=args.w_exp,
        w_cc=args.w_cc,
        w_tv=args.w_tv,
    )
    return _config(
        TrainConfig,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        pool_kernel=pool,
        seed=args.seed,
        weights=weights,
        crop=args.crop,
        widths=args.widths,
        max_steps=args.max_steps,
    )


def cmd_enhance(args) -> int:
    _existing_input(args.input)
    params = _read_params(args.checkpoint)
    img = load_image(args.input)
    start = time.perf_counter()
    out = enhance(img, params, args.pool_kernel)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    save_image(out, args.output)
    print(f"{elapsed_ms:.1f} ms")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset_paths(args.data_dir)
    cfg = _train_config(args, args.pool_kernel)
    result = train(load_dataset(args.data_dir), cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, args.out)
    history = args.history or args.out.with_suffix(".history.txt")
    lines = [" ".join([str(i)] + [repr(v) for v in rep.values()]) for i, rep in enumerate(result.history)]
    Path(history).write_text("\n".join(lines) + "\n")
    print(f"trained {len(result.step_totals)} steps, final total {result.history[-1].total:.6f}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    _existing_input(args.input)
    cfg = _config(DehazeConfig, window=args.window, gamma=args.gamma, omega=args.omega)
    save_image(baseline(load_image(args.input), cfg), args.output)
    return EXIT_OK


def cmd_degrade(args) -> int:
    base = _config(
        DegradeConfig,
        haze_strength=args.haze,
        airlight=args.airlight,
        vignette_strength=args.vignette,
        blur_sigma=args.blur,
        seed=args.seed,
    )
    out = args.output
    if args.synthetic:
        sources = [(f"scene_{i:04d}.png", clean_scene(args.size, args.size, seeded_rng(args.seed, i))) for i in range(args.synthetic)]
        (out / "clean").mkdir(parents=True, exist_ok=True)
        for name, img in sources:
            save_image(img, out / "clean" / name)
    else:
        if args.input is None:
            raise UsageError("degrade needs --input or --synthetic")
        _existing_input(args.input)
        paths = dataset_paths(args.input) if args.input.is_dir() else [args.input]
        sources = [(p.with_suffix(".png").name, load_image(p)) for p in paths]
    out.mkdir(parents=True, exist_ok=True)
    manifest = [f"{k}={v}" for k, v in base.as_dict().items()]
    for i, (name, img) in enumerate(sources):
        cfg = replace(base, seed=args.seed + i)
        save_image(degrade(img, cfg), out / name)
        manifest.append(f"{name} seed={cfg.seed}")
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return EXIT_OK


def _pairs(pred: Path, ref: Path) -> list[tuple[Path, Path]]:
    _existing_input(pred)
    _existing_input(ref)
    if pred.is_dir() != ref.is_dir():
        raise UsageError("--pred and --ref must both be files or both be directories")
    if not pred.is_dir():
        return [(pred, ref)]
    pairs = [(p, ref / p.name) for p in dataset_paths(pred) if (ref / p.name).exists()]
    if not pairs:
        raise UsageError(f"no file names shared between {pred} and {ref}")
    return pairs


def cmd_eval(args) -> int:
    for p, r in _pairs(args.pred, args.ref):
        a, b = load_image(p), load_image(r)
        if a.pixels.shape != b.pixels.shape:
            raise ValueError(f"{p.name}: dimensions {a.pixels.shape[1:]} and {b.pixels.shape[1:]} differ")
        print(f"{p.name} psnr={round(psnr(a, b), 4)} ssim={round(ssim(a, b), 6)}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    images = load_dataset(args.data_dir)
    refs = None
    if args.ref_dir is not None:
        _existing_input(args.ref_dir)
        refs = [load_image(args.ref_dir / p.name) for p in dataset_paths(args.data_dir)]
    cfg = _train_config(args, 3)
    rows = ablate(images, cfg, kernels=(None, 3, 8, 16), references=refs)
    print(format_ablation(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="zrudc", description="Zero-reference enhancement of display-degraded photos.", formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("enhance", help="enhance one image with a trained checkpoint", formatter_class=fmt)
    p.add_argument("--input", type=Path, required=True, help="input PNG/PPM")
    p.add_argument("--output", type=Path, required=True, help="output PNG")
    p.add_argument("--checkpoint", type=Path, required=True, help="trained weights")
    p.add_argument("--pool-kernel", type=pool_kernel, default=3, help="grid pooling kernel or 'none'")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", help="train the grid network without references", formatter_class=fmt)
    _add_train_flags(p, TrainConfig().epochs)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path to write")
    p.add_argument("--history", type=Path, default=None, help="loss history path; None writes it next to the checkpoint")
    p.add_argument("--pool-kernel", type=pool_kernel, default=3, help="grid pooling kernel or 'none'")
    p.set_defaults(func=cmd_train)

    d = DehazeConfig()
    p = sub.add_parser("baseline", help="dark channel dehazing plus gamma correction", formatter_class=fmt)
    p.add_argument("--input", type=Path, required=True, help="input PNG/PPM")
    p.add_argument("--output", type=Path, required=True, help="output PNG")
    p.add_argument("--window", type=int, default=d.window, help="dark channel window side (odd)")
    p.add_argument("--gamma", type=float, default=d.gamma, help="gamma exponent applied after dehazing")
    p.add_argument("--omega", type=float, default=d.omega, help="fraction of haze removed")
    p.set_defaults(func=cmd_baseline)

    d = DegradeConfig()
    p = sub.add_parser("degrade", help="write a synthetically degraded corpus", formatter_class=fmt)
    p.add_argument("--input", type=Path, default=None, help="clean image or directory")
    p.add_argument("--output", type=Path, required=True, help="output directory")
    p.add_argument("--synthetic", type=int, default=0, help="generate this many clean scenes instead of reading --input")
    p.add_argument("--size", type=int, default=64, help="side of generated scenes")
    p.add_argument("--haze", type=float, default=d.haze_strength, help="maximum haze strength")
    p.add_argument("--airlight", type=float_triple, default=d.airlight, help="airlight colour r,g,b")
    p.add_argument("--vignette", type=float, default=d.vignette_strength, help="corner darkening strength")
    p.add_argument("--blur", type=float, default=d.blur_sigma, help="Gaussian blur sigma in pixels")
    p.add_argument("--seed", type=int, default=d.seed, help="base seed; image i uses seed + i")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("eval", help="PSNR/SSIM between predictions and references", formatter_class=fmt)
    p.add_argument("--pred", type=Path, required=True, help="predicted image or directory")
    p.add_argument("--ref", type=Path, required=True, help="reference image or directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score one model per pool kernel", formatter_class=fmt)
    _add_train_flags(p, 2)
    p.add_argument("--ref-dir", type=Path, default=None, help="clean references with matching names")
    p.set_defaults(func=cmd_ablate)
    return parser


def _thread_limit():
    value = os.environ.get("ZRUDC_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"ZRUDC_THREADS must be an integer, got {value!r}")
    if n < 1:
        raise UsageError(f"ZRUDC_THREADS must be positive, got {n}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _fail(code: int, message: str) -> int:
    print(f"error: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except EmptyDatasetError as exc:
        return _fail(EXIT_USAGE, exc)
    except TrainingDivergedError as exc:
        return _fail(EXIT_RUNTIME, exc)
    except (ImageIOError, CheckpointError, ValueError, OSError) as exc:
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())

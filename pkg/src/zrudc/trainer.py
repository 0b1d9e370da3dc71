"""Zero-reference training: Adam over the weighted non-reference objective."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .gridnet import DEFAULT_WIDTHS, GridNetConfig, GridNetParams, init_params, lowrank_size
from .imageio import PROXY_SIZE, ImageRGB, load_image
from .losses import LossReport, LossWeights, dark_channel, loss_total
from .slicing import enhance, forward_image
from .tensor import GradTape, Tensor

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm")


class EmptyDatasetError(Exception):
    pass


class TrainingDivergedError(Exception):
    """Raised when a loss term becomes non-finite; ``term`` names it."""

    def __init__(self, term: str, step: int):
        super().__init__(f"non-finite loss in term '{term}' at step {step}")
        self.term = term
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int = 4
    pool_kernel: int | None = 3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    crop: int = 64
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    proxy_size: int = PROXY_SIZE
    # when set, training stops after this many optimiser steps regardless of epochs
    max_steps: int | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.pool_kernel is not None and self.pool_kernel < 1:
            raise ValueError(f"pool_kernel must be positive or None, got {self.pool_kernel}")

    @property
    def net_config(self) -> GridNetConfig:
        return GridNetConfig(tuple(self.widths), self.proxy_size)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameter arrays and state."""
    step = state.step + 1
    c1 = 1.0 - cfg.beta1**step
    c2 = 1.0 - cfg.beta2**step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = cfg.beta1 * state.m[name] + (1 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1 - cfg.beta2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        new_params[name] = (p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)).astype(p.dtype)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    return new_params, AdamState(new_m, new_v, step)


def dataset_paths(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyDatasetError(f"data directory {directory} does not exist")
    paths = sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise EmptyDatasetError(f"no training images in {directory}")
    return paths


def load_dataset(directory) -> list[ImageRGB]:
    return [load_image(p) for p in dataset_paths(directory)]


def random_crop(img: ImageRGB, size: int, rng: np.random.Generator) -> np.ndarray:
    _, h, w = img.pixels.shape
    ch, cw = min(size, h), min(size, w)
    y = int(rng.integers(0, h - ch + 1))
    x = int(rng.integers(0, w - cw + 1))
    return np.ascontiguousarray(img.pixels[:, y : y + ch, x : x + cw], dtype=np.float32)


def image_loss(
    raw: np.ndarray,
    params: GridNetParams,
    cfg: TrainConfig,
    with_grad: bool = True,
) -> tuple[LossReport, dict[str, np.ndarray] | None]:
    """Loss report (and parameter gradients) of the pre-clamp output for one image."""
    inp = Tensor(raw.astype(params["head.weight"].dtype, copy=False))
    if not with_grad:
        out, grid = forward_image(inp, params, cfg.pool_kernel)
        return loss_total(out, inp, grid, cfg.weights)[1], None
    trainable = params.trainable()
    with GradTape() as tape:
        out, grid = forward_image(inp, trainable, cfg.pool_kernel)
        total, report = loss_total(out, inp, grid, cfg.weights)
    return report, tape.gradient(total, trainable.tensors)


@dataclass
class TrainResult:
    params: GridNetParams
    history: list[LossReport]
    step_totals: list[float]


def train(
    images: Sequence[ImageRGB] | str | Path,
    cfg: TrainConfig = TrainConfig(),
    params: GridNetParams | None = None,
    on_step: Callable[[int, LossReport], None] | None = None,
) -> TrainResult:
    """Train the grid network; deterministic given the images and ``cfg`` (including its seed).

    ``history`` holds the mean :class:`LossReport` of every epoch and
    ``step_totals`` the batch-mean total loss of every optimiser step.
    """
    if isinstance(images, (str, Path)):
        images = load_dataset(images)
    if not images:
        raise EmptyDatasetError("no training images")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(cfg.net_config, seed=cfg.seed)
    arrays = {k: v.copy() for k, v in params.arrays().items()}
    state = AdamState.zeros_like(arrays)
    history: list[LossReport] = []
    step_totals: list[float] = []
    n = len(images)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    epochs = cfg.epochs if cfg.max_steps is None else math.ceil(cfg.max_steps / steps_per_epoch)
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_reports: list[LossReport] = []
        for start in range(0, n, cfg.batch_size):
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                break
            batch = order[start : start + cfg.batch_size]
            current = params.with_arrays(arrays)
            acc = {k: np.zeros_like(v) for k, v in arrays.items()}
            reports = []
            for idx in batch:
                crop = random_crop(images[idx], cfg.crop, rng)
                report, grads = image_loss(crop, current, cfg)
                bad = report.offending_term(cfg.weights)
                if bad is not None:
                    raise TrainingDivergedError(bad, state.step + 1)
                for k in acc:
                    acc[k] += grads[k]
                reports.append(report)
            for k in acc:
                acc[k] /= len(batch)
            arrays, state = adam_step(arrays, acc, state, cfg)
            step_report = LossReport.average(reports, cfg.weights)
            step_totals.append(step_report.total)
            epoch_reports.extend(reports)
            if on_step is not None:
                on_step(state.step, step_report)
        if epoch_reports:
            history.append(LossReport.average(epoch_reports, cfg.weights))
            log.info("epoch %d total %.6f", epoch, history[-1].total)
    return TrainResult(params.with_arrays(arrays), history, step_totals)


def corpus_loss(images: Sequence[ImageRGB], params: GridNetParams, cfg: TrainConfig) -> LossReport:
    """Mean loss report over whole images (no cropping, no gradient)."""
    reports = [image_loss(img.pixels, params, cfg, with_grad=False)[0] for img in images]
    return LossReport.average(reports, cfg.weights)


def mean_dark_channel(images: Sequence[ImageRGB], patch: int) -> float:
    return float(np.mean([dark_channel(Tensor(img.pixels), patch).data.mean() for img in images]))


@dataclass
class AblationRow:
    kernel: int | None
    grid_size: tuple[int, int]
    loss: float
    psnr: float | None
    ssim: float | None

    @property
    def label(self) -> str:
        return "K=None" if self.kernel is None else f"K={self.kernel}"


def ablate(
    images: Sequence[ImageRGB],
    cfg: TrainConfig,
    kernels: Sequence[int | None] = (None, 3, 8, 16),
    references: Sequence[ImageRGB] | None = None,
    on_trained: Callable[[int | None, TrainResult], None] | None = None,
) -> list[AblationRow]:
    """Train one model per pool kernel and score it (loss, and PSNR/SSIM when references exist)."""
    from .metrics import psnr, ssim

    rows = []
    for k in kernels:
        run_cfg = replace(cfg, pool_kernel=k)
        result = train(images, run_cfg)
        if on_trained is not None:
            on_trained(k, result)
        side = lowrank_size(cfg.proxy_size, k)
        loss = corpus_loss(images, result.params, run_cfg).total
        p = s = None
        if references is not None:
            outs = [enhance(img, result.params, k) for img in images]
            p = float(np.mean([psnr(o, r) for o, r in zip(outs, references)]))
            s = float(np.mean([ssim(o, r) for o, r in zip(outs, references)]))
        rows.append(AblationRow(k, (side, side), loss, p, s))
    return rows


def format_ablation(rows: Sequence[AblationRow]) -> str:
    """Plain-text table: a header line then one row per kernel."""
    lines = ["K grid loss psnr ssim"]
    for r in rows:
        p = "-" if r.psnr is None else f"{r.psnr:.2f}"
        s = "-" if r.ssim is None else f"{r.ssim:.4f}"
        lines.append(f"{r.label} {r.grid_size[0]}x{r.grid_size[1]} {r.loss:.6f} {p} {s}")
    return "\n".join(lines)

"""Synthetic scenes and the haze / vignette / blur degradation used for training data.

These stand in for real captures through a display panel: a milky veil
(haze toward an airlight colour), darkened corners, and optical blur.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import ImageRGB
from .tensor import bilinear_array


@dataclass(frozen=True)
class DegradeConfig:
    haze_strength: float = 0.5
    airlight: tuple[float, float, float] = (0.9, 0.9, 0.9)
    vignette_strength: float = 0.3
    blur_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.haze_strength <= 1.0:
            raise ValueError(f"haze_strength must lie in [0, 1], got {self.haze_strength}")
        if not 0.0 <= self.vignette_strength <= 1.0:
            raise ValueError(f"vignette_strength must lie in [0, 1], got {self.vignette_strength}")
        if self.blur_sigma < 0:
            raise ValueError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if len(self.airlight) != 3 or not all(0.0 <= a <= 1.0 for a in self.airlight):
            raise ValueError(f"airlight must be three values in [0, 1], got {self.airlight}")

    def as_dict(self) -> dict:
        return asdict(self)


def smooth_field(h: int, w: int, rng: np.random.Generator, cells: int = 4) -> np.ndarray:
    """Random field in [0, 1] made by bilinearly upsampling a coarse random grid."""
    coarse = rng.random((1, cells, cells))
    field = bilinear_array(coarse, h, w)[0]
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)


def clean_scene(h: int, w: int, rng: np.random.Generator) -> ImageRGB:
    """Haze-free scene: smooth colour regions with a few hard-edged rectangles.

    Every pixel has one channel at zero, so the dark channel is zero.
    """
    img = np.stack([smooth_field(h, w, rng, cells=int(rng.integers(3, 7))) for _ in range(3)])
    for _ in range(int(rng.integers(2, 5))):
        y0, x0 = rng.integers(0, h // 2), rng.integers(0, w // 2)
        y1, x1 = y0 + rng.integers(h // 8, h // 2), x0 + rng.integers(w // 8, w // 2)
        img[:, y0:y1, x0:x1] = rng.random((3, 1, 1))
    img = img - img.min(axis=0, keepdims=True)
    img = img / max(float(img.max()), 1e-12) * rng.uniform(0.7, 1.0)
    return ImageRGB(np.clip(img, 0.0, 1.0).astype(np.float32))


def add_haze(clean: np.ndarray, t: np.ndarray, airlight) -> np.ndarray:
    """Atmospheric scattering model I = t J + (1 - t) A."""
    a = np.asarray(airlight, dtype=clean.dtype)[:, None, None]
    t = np.asarray(t, dtype=clean.dtype)
    return t * clean + (1 - t) * a


def vignette(h: int, w: int, strength: float) -> np.ndarray:
    """Radial multiplier equal to 1 at the centre and ``1 - strength`` at the corners."""
    y = (np.arange(h) + 0.5) / h * 2 - 1
    x = (np.arange(w) + 0.5) / w * 2 - 1
    r2 = (y[:, None] ** 2 + x[None, :] ** 2) / (y[0] ** 2 + x[0] ** 2)
    return 1.0 - strength * r2


def degrade(img: ImageRGB, cfg: DegradeConfig) -> ImageRGB:
    """Blur, then haze with a smooth random transmission t >= 1 - haze_strength, then vignette."""
    rng = np.random.default_rng(cfg.seed)
    px = img.pixels.astype(np.float64)
    _, h, w = px.shape
    if cfg.blur_sigma > 0:
        px = np.stack([gaussian_filter(ch, cfg.blur_sigma, mode="nearest") for ch in px])
    t = 1.0 - cfg.haze_strength * smooth_field(h, w, rng)
    px = add_haze(px, t[None], cfg.airlight)
    if cfg.vignette_strength > 0:
        px = px * vignette(h, w, cfg.vignette_strength)[None]
    return ImageRGB(np.clip(px, 0.0, 1.0).astype(img.pixels.dtype))


def planted_haze(
    clean: ImageRGB,
    rng: np.random.Generator,
    t_range=(0.4, 0.9),
    airlight=(0.9, 0.9, 0.9),
) -> tuple[ImageRGB, np.ndarray]:
    """Haze a clean image with a smooth transmission spanning ``t_range``; returns (hazy, t)."""
    _, h, w = clean.pixels.shape
    lo, hi = t_range
    t = lo + (hi - lo) * smooth_field(h, w, rng)
    hazy = add_haze(clean.pixels.astype(np.float64), t[None], airlight)
    return ImageRGB(np.clip(hazy, 0.0, 1.0).astype(np.float32)), t


def seeded_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))

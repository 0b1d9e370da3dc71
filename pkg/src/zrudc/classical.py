"""Dark-channel-prior dehazing followed by gamma correction (deterministic baseline)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from .imageio import ImageRGB


@dataclass(frozen=True)
class DehazeConfig:
    window: int = 45
    omega: float = 0.95
    t_floor: float = 0.1
    airlight_quantile: float = 0.001
    gamma: float = 0.7

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 1, got {self.window}")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        if not 0.0 < self.t_floor < 1.0:
            raise ValueError(f"t_floor must lie in (0, 1), got {self.t_floor}")
        if not 0.0 < self.airlight_quantile <= 1.0:
            raise ValueError(f"airlight_quantile must lie in (0, 1], got {self.airlight_quantile}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def dark_channel_array(pixels: np.ndarray, window: int) -> np.ndarray:
    return minimum_filter(pixels.min(axis=0), size=window, mode="nearest")


def bright_channel_array(pixels: np.ndarray, window: int) -> np.ndarray:
    return maximum_filter(pixels.max(axis=0), size=window, mode="nearest")


def estimate_airlight(img: ImageRGB, cfg: DehazeConfig = DehazeConfig()) -> np.ndarray:
    """Mean colour of the top ``airlight_quantile`` fraction of pixels ranked by dark channel."""
    px = img.pixels.astype(np.float64)
    dark = dark_channel_array(px, cfg.window).ravel()
    n = max(1, int(np.ceil(cfg.airlight_quantile * dark.size - 1e-9)))
    # stable sort keeps ties in scan order
    idx = np.argsort(-dark, kind="stable")[:n]
    return px.reshape(3, -1)[:, idx].mean(axis=1)


def transmission(img: ImageRGB, airlight: np.ndarray, cfg: DehazeConfig) -> np.ndarray:
    normed = img.pixels.astype(np.float64) / np.maximum(airlight, 1e-6)[:, None, None]
    return np.maximum(cfg.t_floor, 1.0 - cfg.omega * dark_channel_array(normed, cfg.window))


def dehaze(img: ImageRGB, cfg: DehazeConfig = DehazeConfig(), airlight=None) -> ImageRGB:
    """Invert I = t J + (1 - t) A with the dark-channel transmission estimate.

    ``airlight`` overrides the estimated atmospheric light when given.
    """
    a = estimate_airlight(img, cfg) if airlight is None else np.asarray(airlight, dtype=np.float64)
    t = transmission(img, a, cfg)
    px = img.pixels.astype(np.float64)
    j = (px - a[:, None, None]) / t[None] + a[:, None, None]
    return ImageRGB(np.clip(j, 0.0, 1.0).astype(img.pixels.dtype))


def gamma_correct(img: ImageRGB, gamma: float) -> ImageRGB:
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return ImageRGB(np.power(img.pixels, gamma).astype(img.pixels.dtype))


def baseline(img: ImageRGB, cfg: DehazeConfig = DehazeConfig()) -> ImageRGB:
    return gamma_correct(dehaze(img, cfg), cfg.gamma)

"""Reference-based quality metrics (PSNR and SSIM)."""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

from .imageio import ImageRGB

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _pixels(img) -> np.ndarray:
    return (img.pixels if isinstance(img, ImageRGB) else np.asarray(img)).astype(np.float64)


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for peak 1.0; identical images give the 99 dB cap."""
    x, y = _pixels(a), _pixels(b)
    _check_pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    return convolve2d(x, win, mode="valid")


def ssim(a, b) -> float:
    """Mean SSIM over all valid 11x11 Gaussian window positions, averaged over channels."""
    x, y = _pixels(a), _pixels(b)
    _check_pair(x, y)
    if x.shape[-2] < SSIM_WINDOW or x.shape[-1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape[-2:]}")
    win = gaussian_window()
    scores = []
    for xc, yc in zip(x.reshape(-1, *x.shape[-2:]), y.reshape(-1, *y.shape[-2:])):
        mu_x, mu_y = _filter(xc, win), _filter(yc, win)
        var_x = _filter(xc * xc, win) - mu_x * mu_x
        var_y = _filter(yc * yc, win) - mu_y * mu_y
        cov = _filter(xc * yc, win) - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))

"""Full-resolution path: grid upsampling, smoothing slicing and the learned squeeze."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .gridnet import AffineGrid, GridNetParams, grid_forward, low_rank
from .imageio import ImageRGB, make_proxy
from .tensor import Tensor

# rows of output processed per tile on the inference path
TILE_ROWS = 256


def grid_upsample(lowrank: AffineGrid, height: int, width: int) -> AffineGrid:
    """Bilinearly resize all 12 coefficient maps to the raw image size."""
    return AffineGrid(T.bilinear_resize(lowrank.coeffs, height, width))


def _multipliers(raw: np.ndarray) -> np.ndarray:
    # [r, g, b, 1] repeated once per output channel -> 12 x H x W
    ones = np.ones((1,) + raw.shape[1:], dtype=raw.dtype)
    return np.concatenate([raw, ones] * 3, axis=0)


def s_slice(full_grid: AffineGrid, raw: ImageRGB | Tensor | np.ndarray) -> Tensor:
    """Produce the 12 sliced maps F[4c+j] = G[4c+j] * raw[j], F[4c+3] = G[4c+3]."""
    px = raw.pixels if isinstance(raw, ImageRGB) else raw.data if isinstance(raw, Tensor) else np.asarray(raw)
    if px.shape[0] != 3 or px.shape[1:] != full_grid.size:
        raise ValueError(f"grid spatial size {full_grid.size} does not match image {px.shape[1:]}")
    g = full_grid.coeffs
    return T.mul(g, Tensor(_multipliers(px.astype(g.dtype, copy=False))))


def decompress(features: Tensor, params: GridNetParams, clamp: bool = True) -> Tensor:
    """3x3 convolution squeezing the 12 sliced maps to RGB, then clamped to [0, 1]."""
    out = T.conv2d(features, params["decompress.weight"], params["decompress.bias"], stride=1, padding=1)
    return T.clamp(out, 0.0, 1.0) if clamp else out


def forward_image(
    raw: Tensor,
    params: GridNetParams,
    pool_kernel: int | None,
    proxy: Tensor | None = None,
) -> tuple[Tensor, AffineGrid]:
    """Differentiable pipeline returning the pre-clamp output and the coarse grid T.

    Used by training and gradient checks; ``raw`` is ``3 x H x W``.
    """
    _, h, w = raw.shape
    if proxy is None:
        size = params.config.proxy_size
        proxy = T.bilinear_resize(raw, size, size)
    grid = grid_forward(proxy, params)
    coarse = low_rank(grid, pool_kernel, params)
    full = grid_upsample(coarse, h, w)
    out = decompress(s_slice(full, raw), params, clamp=False)
    return out, grid


def apply_grid(
    raw: ImageRGB | np.ndarray,
    lowrank: AffineGrid | np.ndarray,
    params: GridNetParams,
    clamp: bool = True,
    tile_rows: int = TILE_ROWS,
) -> np.ndarray:
    """Upsample, slice and squeeze in horizontal stripes; returns a 3 x H x W array.

    Only the stripe being processed (plus a one-row halo for the 3x3 squeeze)
    is ever held at 12-channel full resolution, so memory stays bounded for
    very large images.
    """
    px = raw.pixels if isinstance(raw, ImageRGB) else np.asarray(raw)
    coeffs = lowrank.coeffs.data if isinstance(lowrank, AffineGrid) else np.asarray(lowrank)
    dtype = params["decompress.weight"].dtype
    px = px.astype(dtype, copy=False)
    coeffs = coeffs.astype(dtype, copy=False)
    _, h, w = px.shape
    weight = params["decompress.weight"].data
    bias = params["decompress.bias"].data
    cols = T.resize_cols_array(coeffs, w) if coeffs.shape[2] != w else coeffs
    out = np.empty((3, h, w), dtype=dtype)
    for r0 in range(0, h, tile_rows):
        r1 = min(r0 + tile_rows, h)
        a, b = max(r0 - 1, 0), min(r1 + 1, h)
        g = T.resize_rows_array(cols, h, a, b)
        feats = g * _multipliers(px[:, a:b])
        feats = np.pad(feats, ((0, 0), (1 if r0 == 0 else 0, 1 if r1 == h else 0), (1, 1)))
        out[:, r0:r1] = T.conv2d_array(feats, weight, bias)
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def predict_lowrank(img: ImageRGB, params: GridNetParams, pool_kernel: int | None) -> AffineGrid:
    proxy = make_proxy(img, params.config.proxy_size)
    return low_rank(grid_forward(proxy, params), pool_kernel, params)


def enhance(img: ImageRGB, params: GridNetParams, pool_kernel: int | None = 3) -> ImageRGB:
    """Enhance an image of any size: proxy -> grid -> low-rank -> slicing -> squeeze."""
    coarse = predict_lowrank(img, params, pool_kernel)
    return ImageRGB(apply_grid(img, coarse, params))

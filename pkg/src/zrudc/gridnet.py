"""Encoder-decoder that regresses the 12-channel affine grid, and low-rank pooling.

The network is a small U-Net: each encoder level is two 3x3 convolutions with
PReLU activations, levels are separated by 2x max-pooling, and the decoder
mirrors it with bilinear upsampling and skip concatenation. A 1x1 head maps
the top decoder features to the 12 affine coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .imageio import PROXY_SIZE
from .tensor import Tensor

GRID_CHANNELS = 12
DEFAULT_WIDTHS = (16, 32, 64)


@dataclass(frozen=True)
class GridNetConfig:
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    proxy_size: int = PROXY_SIZE

    def __post_init__(self):
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.proxy_size < 2 ** (len(self.widths) - 1):
            raise ValueError(f"proxy_size {self.proxy_size} too small for {len(self.widths)} levels")


class AffineGrid:
    """Field of 3x4 colour affines stored as 12 coefficient maps.

    Channel ``4 * c + j`` multiplies input channel ``j`` for output channel
    ``c`` (``j`` in 0..2); channel ``4 * c + 3`` is the additive bias.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Tensor | np.ndarray):
        if not isinstance(coeffs, Tensor):
            coeffs = Tensor(coeffs)
        if coeffs.ndim != 3 or coeffs.shape[0] != GRID_CHANNELS:
            raise ValueError(f"affine grid must be 12 x Gh x Gw, got {coeffs.shape}")
        self.coeffs = coeffs

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.coeffs.shape

    @property
    def size(self) -> tuple[int, int]:
        return self.coeffs.shape[1], self.coeffs.shape[2]

    def matrices(self) -> np.ndarray:
        """Coefficients as an array of shape (Gh, Gw, 3, 4)."""
        c = self.coeffs.data
        return c.reshape(3, 4, c.shape[1], c.shape[2]).transpose(2, 3, 0, 1)

    def __repr__(self) -> str:
        return f"AffineGrid{self.shape}"


def identity_coefficients(dtype=np.float32) -> np.ndarray:
    coef = np.zeros(GRID_CHANNELS, dtype=dtype)
    for c in range(3):
        coef[4 * c + c] = 1.0
    return coef


def identity_grid(h: int, w: int, dtype=np.float32) -> AffineGrid:
    return AffineGrid(np.broadcast_to(identity_coefficients(dtype)[:, None, None], (GRID_CHANNELS, h, w)).copy())


def group_sum_weights(dtype=np.float32) -> np.ndarray:
    """3x12x3x3 decompress kernel that sums maps 4c..4c+3 at the centre tap.

    With these weights the learned squeeze reduces to the classic additive
    application of the per-pixel affine.
    """
    w = np.zeros((3, GRID_CHANNELS, 3, 3), dtype=dtype)
    for c in range(3):
        w[c, 4 * c : 4 * c + 4, 1, 1] = 1.0
    return w


@dataclass
class GridNetParams:
    """All learnable tensors, keyed by a stable dotted name."""

    config: GridNetConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "GridNetParams":
        return GridNetParams(self.config, {k: Tensor(np.asarray(arrays[k])) for k in self.tensors})

    def copy(self) -> "GridNetParams":
        return self.with_arrays({k: t.data.copy() for k, t in self.tensors.items()})

    def astype(self, dtype) -> "GridNetParams":
        return self.with_arrays({k: t.data.astype(dtype) for k, t in self.tensors.items()})

    def trainable(self) -> "GridNetParams":
        """Copy whose tensors all require gradients."""
        return GridNetParams(self.config, {k: Tensor(t.data, requires_grad=True) for k, t in self.tensors.items()})

    def is_finite(self) -> bool:
        return T.parameters_finite(self.tensors.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())


def _conv_layers(config: GridNetConfig) -> list[tuple[str, int, int, int]]:
    """(name, c_in, c_out, kernel) for every convolution in the network."""
    widths = config.widths
    layers = []
    c_in = 3
    for i, w in enumerate(widths):
        layers.append((f"enc{i}.conv0", c_in, w, 3))
        layers.append((f"enc{i}.conv1", w, w, 3))
        c_in = w
    for i in range(len(widths) - 2, -1, -1):
        layers.append((f"dec{i}.conv0", widths[i + 1] + widths[i], widths[i], 3))
        layers.append((f"dec{i}.conv1", widths[i], widths[i], 3))
    layers.append(("head", widths[0], GRID_CHANNELS, 1))
    return layers


def init_params(
    config: GridNetConfig | None = None,
    seed: int = 0,
    head_scale: float = 0.01,
    dtype=np.float32,
) -> GridNetParams:
    """Initialise parameters so the untrained pipeline is close to the identity.

    Convolutions use uniform fan-in scaling. The head bias encodes the identity
    affine and the head weights are shrunk by ``head_scale`` (0 gives an exact
    identity grid). The decompress kernel starts as the group-sum delta.
    """
    config = config or GridNetConfig()
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, cin, cout, k in _conv_layers(config):
        bound = 1.0 / np.sqrt(cin * k * k)
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
        b = rng.uniform(-bound, bound, size=cout)
        if name == "head":
            w = w * head_scale
            b = identity_coefficients(np.float64)
        tensors[f"{name}.weight"] = Tensor(w.astype(dtype))
        tensors[f"{name}.bias"] = Tensor(b.astype(dtype))
        if name != "head":
            tensors[f"{name}.slope"] = Tensor(np.array(0.25, dtype=dtype))
    tensors["lowrank.slope"] = Tensor(np.array(0.25, dtype=dtype))
    tensors["decompress.weight"] = Tensor(group_sum_weights(dtype))
    tensors["decompress.bias"] = Tensor(np.zeros(3, dtype=dtype))
    return GridNetParams(config, tensors)


def config_from_names(shapes: dict[str, tuple[int, ...]], proxy_size: int = PROXY_SIZE) -> GridNetConfig:
    """Recover the network widths from parameter shapes (used when loading checkpoints)."""
    widths = []
    i = 0
    while f"enc{i}.conv0.weight" in shapes:
        widths.append(shapes[f"enc{i}.conv0.weight"][0])
        i += 1
    if not widths:
        raise ValueError("no encoder parameters found")
    return GridNetConfig(tuple(widths), proxy_size)


def _block(x: Tensor, params: GridNetParams, prefix: str) -> Tensor:
    for j in range(2):
        name = f"{prefix}.conv{j}"
        x = T.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=1, padding=1)
        x = T.prelu(x, params[f"{name}.slope"])
    return x


def grid_forward(proxy: Tensor, params: GridNetParams) -> AffineGrid:
    """Map the ``3 x P x P`` proxy to the full-resolution coefficient grid T (``12 x P x P``)."""
    size = params.config.proxy_size
    if proxy.shape != (3, size, size):
        raise ValueError(f"proxy must have shape (3, {size}, {size}), got {proxy.shape}")
    levels = len(params.config.widths)
    skips = []
    x = proxy
    for i in range(levels):
        if i > 0:
            x = T.maxpool2d(x, 2, 2)
        x = _block(x, params, f"enc{i}")
        skips.append(x)
    for i in range(levels - 2, -1, -1):
        skip = skips[i]
        x = T.bilinear_resize(x, skip.shape[1], skip.shape[2])
        x = _block(T.concat([x, skip], axis=0), params, f"dec{i}")
    out = T.conv2d(x, params["head.weight"], params["head.bias"], stride=1, padding=0)
    return AffineGrid(out)


def low_rank(grid: AffineGrid, kernel: int | None, params: GridNetParams) -> AffineGrid:
    """T' = PReLU(MaxPool_k(T)) with non-overlapping windows; ``kernel=None`` skips pooling."""
    x = grid.coeffs
    if kernel is not None:
        if kernel <= 0:
            raise ValueError(f"pool kernel must be positive, got {kernel}")
        x = T.maxpool2d(x, kernel, kernel)
    return AffineGrid(T.prelu(x, params["lowrank.slope"]))


def lowrank_size(size: int, kernel: int | None) -> int:
    return size if kernel is None else T.pooled_size(size, kernel, kernel)

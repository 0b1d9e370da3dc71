"""8-bit image loading/saving and the fixed-size network proxy."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tensor import Tensor, bilinear_array

PROXY_SIZE = 256
MIN_SIDE = 8


class ImageIOError(Exception):
    """Base class for image loading and saving failures."""


class UnreadableImageError(ImageIOError):
    pass


class UnsupportedBitDepthError(ImageIOError):
    pass


class GrayscaleImageError(ImageIOError):
    pass


class ImageWriteError(ImageIOError):
    pass


@dataclass(frozen=True)
class ImageRGB:
    """Float RGB image stored channel-first (3 x H x W) with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[0] != 3:
            raise ValueError(f"ImageRGB needs a 3 x H x W array, got shape {px.shape}")
        if px.shape[1] < MIN_SIDE or px.shape[2] < MIN_SIDE:
            raise ValueError(f"ImageRGB needs H, W >= {MIN_SIDE}, got {px.shape[1]}x{px.shape[2]}")
        if px.dtype not in (np.float32, np.float64):
            px = px.astype(np.float32)
        if not np.isfinite(px).all() or px.min() < 0 or px.max() > 1:
            raise ValueError("ImageRGB values must be finite and within [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def tensor(self) -> Tensor:
        return Tensor(self.pixels)

    @classmethod
    def from_hwc(cls, arr: np.ndarray) -> "ImageRGB":
        return cls(np.ascontiguousarray(np.asarray(arr).transpose(2, 0, 1)))

    @classmethod
    def clipped(cls, arr: np.ndarray) -> "ImageRGB":
        """Build from an arbitrary 3 x H x W array, clamping into [0, 1]."""
        return cls(np.clip(arr, 0.0, 1.0))


def _png_header(raw: bytes):
    # IHDR is always the first chunk: width, height, bit depth, colour type
    if len(raw) < 29 or raw[12:16] != b"IHDR":
        raise UnreadableImageError("corrupt PNG header")
    return raw[24], raw[25]


def _ppm_maxval(raw: bytes) -> int:
    tokens: list[bytes] = []
    i = 2
    while len(tokens) < 3 and i < len(raw):
        c = raw[i : i + 1]
        if c == b"#":
            while i < len(raw) and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j : j + 1].isspace():
                j += 1
            tokens.append(raw[i:j])
            i = j
    if len(tokens) < 3:
        raise UnreadableImageError("truncated PPM header")
    return int(tokens[2])


def load_image(path) -> ImageRGB:
    """Read an 8-bit RGB PNG or binary PPM (P6); channel value v maps to v / 255."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            head = fh.read(64)
    except OSError as exc:
        raise UnreadableImageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if head.startswith(b"\x89PNG\r\n\x1a\n"):
        depth, colour = _png_header(head)
        if colour in (0, 4):
            raise GrayscaleImageError(f"{path} is a grayscale PNG; RGB required")
        if depth != 8:
            raise UnsupportedBitDepthError(f"{path} has bit depth {depth}; only 8-bit is supported")
    elif head[:2] == b"P6":
        maxval = _ppm_maxval(head)
        if maxval != 255:
            raise UnsupportedBitDepthError(f"{path} has PPM maxval {maxval}; only 255 is supported")
    elif head[:2] in (b"P5", b"P2"):
        raise GrayscaleImageError(f"{path} is a grayscale PGM; RGB required")
    else:
        raise UnreadableImageError(f"{path} is not a PNG or binary PPM file")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGBA", "P"):
                im = im.convert("RGB")
            if im.mode != "RGB":
                raise UnreadableImageError(f"{path} has unsupported mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise UnreadableImageError(f"cannot decode {path}: {exc}") from exc
    return ImageRGB.from_hwc(arr.astype(np.float32) / np.float32(255.0))


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and map v to round-half-up(v * 255) as uint8, H x W x 3."""
    v = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    q = np.floor(v * 255.0 + 0.5).astype(np.uint8)
    return np.ascontiguousarray(q.transpose(1, 2, 0))


def save_image(img: ImageRGB | np.ndarray, path) -> None:
    """Write an 8-bit RGB PNG (or PPM when the suffix is .ppm)."""
    pixels = img.pixels if isinstance(img, ImageRGB) else np.asarray(img)
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    try:
        Image.fromarray(quantize(pixels)).save(path, format=fmt)
    except OSError as exc:
        raise ImageWriteError(f"cannot write {path}: {exc.strerror or exc}") from exc


def make_proxy(img: ImageRGB, size: int = PROXY_SIZE) -> Tensor:
    """Bilinear resize to the fixed ``size x size`` network input."""
    return Tensor(np.ascontiguousarray(bilinear_array(img.pixels, size, size)))


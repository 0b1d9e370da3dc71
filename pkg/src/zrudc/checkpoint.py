"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"ZRUD"  u32 version (=1)  u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
                prod(dims) x f32 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .gridnet import GridNetParams, config_from_names, init_params
from .imageio import PROXY_SIZE
from .tensor import Tensor

MAGIC = b"ZRUD"
VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint format problems."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def encode(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic bytes {blob[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {pos} (needed {n} more)")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after the last tensor")
    return arrays


def save_checkpoint(params: GridNetParams, path) -> None:
    Path(path).write_bytes(encode(params.arrays()))


def load_checkpoint(path, proxy_size: int = PROXY_SIZE) -> GridNetParams:
    arrays = decode(Path(path).read_bytes())
    try:
        config = config_from_names({k: v.shape for k, v in arrays.items()}, proxy_size)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    expected = {k: t.shape for k, t in init_params(config, head_scale=0.0).tensors.items()}
    found = {k: v.shape for k, v in arrays.items()}
    if expected != found:
        missing = sorted(set(expected) - set(found))
        extra = sorted(set(found) - set(expected))
        raise CheckpointError(f"parameter set does not match the network (missing {missing}, unexpected {extra})")
    arrays = {k: arrays[k] for k in expected}
    return GridNetParams(config, {k: Tensor(v) for k, v in arrays.items()})

"""Non-reference losses: dark channel prior, spatial consistency, exposure,
colour constancy, grid smoothness, dark/bright channel sparsity, and their
weighted total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from . import tensor as T
from .gridnet import AffineGrid
from .tensor import Tensor

TERMS = ("dcp", "spa", "exp", "cc", "tv", "dbc")


@dataclass(frozen=True)
class LossWeights:
    w_dcp: float = 0.8
    w_lle: float = 0.1
    w_dbc: float = 0.1
    w_spa: float = 1.0
    w_exp: float = 1.0
    w_cc: float = 0.5
    w_tv: float = 20.0
    exposure: float = 0.6
    spa_region: int = 8
    exp_region: int = 16
    dcp_patch: int = 15
    dbc_patch: int = 5

    def __post_init__(self):
        for name in ("w_dcp", "w_lle", "w_dbc", "w_spa", "w_exp", "w_cc", "w_tv"):
            # NaN is let through on purpose so the trainer's divergence guard can be exercised
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 < self.exposure < 1.0:
            raise ValueError(f"exposure target must lie in (0, 1), got {self.exposure}")
        for name in ("spa_region", "exp_region", "dcp_patch", "dbc_patch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("dcp_patch", "dbc_patch"):
            if getattr(self, name) % 2 == 0:
                raise ValueError(f"{name} must be odd, got {getattr(self, name)}")

    def check_size(self, height: int, width: int) -> None:
        side = min(height, width)
        for name in ("spa_region", "exp_region", "dcp_patch", "dbc_patch"):
            if getattr(self, name) > side:
                raise ValueError(f"{name}={getattr(self, name)} exceeds image side {side}")


@dataclass(frozen=True)
class LossReport:
    dcp: float
    spa: float
    exp: float
    cc: float
    tv: float
    dbc: float
    total: float

    @staticmethod
    def weighted(cfg: LossWeights, dcp, spa, exp, cc, tv, dbc):
        """Weighted total; works on floats and on tensors alike."""
        lle = cfg.w_spa * spa + cfg.w_exp * exp + cfg.w_cc * cc + cfg.w_tv * tv
        return cfg.w_dcp * dcp + cfg.w_lle * lle + cfg.w_dbc * dbc

    @classmethod
    def from_terms(cls, cfg: LossWeights, **terms: float) -> "LossReport":
        values = {k: float(terms[k]) for k in TERMS}
        return cls(total=cls.weighted(cfg, **values), **values)

    def values(self) -> list[float]:
        return [getattr(self, f.name) for f in fields(self)]

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def average(cls, reports: list["LossReport"], cfg: LossWeights) -> "LossReport":
        n = len(reports)
        return cls.from_terms(cfg, **{k: math.fsum(getattr(r, k) for r in reports) / n for k in TERMS})

    def offending_term(self, cfg: LossWeights) -> str | None:
        """First term whose weighted contribution is not finite."""
        weights = {
            "dcp": cfg.w_dcp,
            "spa": cfg.w_lle * cfg.w_spa,
            "exp": cfg.w_lle * cfg.w_exp,
            "cc": cfg.w_lle * cfg.w_cc,
            "tv": cfg.w_lle * cfg.w_tv,
            "dbc": cfg.w_dbc,
        }
        for name in TERMS:
            if not math.isfinite(weights[name] * getattr(self, name)):
                return name
        if not math.isfinite(self.total):
            return "total"
        return None


def luminance(img: Tensor) -> Tensor:
    """Arithmetic mean of the three channels."""
    return T.mean(img, axis=0)


def region_means(plane: Tensor, region: int) -> Tensor:
    """Means over non-overlapping ``region x region`` blocks; partial blocks are dropped."""
    h, w = plane.shape
    rh, rw = h // region, w // region
    if rh < 1 or rw < 1:
        raise ValueError(f"region {region} larger than plane {plane.shape}")
    crop = plane if (rh * region, rw * region) == (h, w) else plane[: rh * region, : rw * region]
    return T.mean(T.reshape(crop, (rh, region, rw, region)), axis=(1, 3))


def dark_channel(img: Tensor, patch: int) -> Tensor:
    """Per-pixel channel minimum followed by a ``patch x patch`` minimum filter."""
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch must be odd and >= 1, got {patch}")
    return T.min_filter2d(T.amin(img, axis=0), patch)


def bright_channel(img: Tensor, patch: int) -> Tensor:
    """Per-pixel channel maximum followed by a ``patch x patch`` maximum filter."""
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch must be odd and >= 1, got {patch}")
    return T.max_filter2d(T.amax(img, axis=0), patch)


def loss_dcp(out: Tensor, cfg: LossWeights) -> Tensor:
    return T.mean(T.absolute(dark_channel(out, cfg.dcp_patch)))


def loss_spa(out: Tensor, inp: Tensor, cfg: LossWeights) -> Tensor:
    if out.shape != inp.shape:
        raise ValueError(f"output {out.shape} and input {inp.shape} shapes differ")
    o = region_means(luminance(out), cfg.spa_region)
    i = region_means(luminance(Tensor(inp.data)), cfg.spa_region).data
    rh, rw = o.shape
    total = None
    # every neighbouring pair is visited from both sides, hence the factor 2
    if rw > 1:
        d_out = T.absolute(o[:, 1:] - o[:, :-1])
        d_in = abs(i[:, 1:] - i[:, :-1])
        total = T.sum_(T.square(d_out - d_in)) * 2.0
    if rh > 1:
        d_out = T.absolute(o[1:, :] - o[:-1, :])
        d_in = abs(i[1:, :] - i[:-1, :])
        vert = T.sum_(T.square(d_out - d_in)) * 2.0
        total = vert if total is None else total + vert
    if total is None:
        return Tensor(0.0, dtype=out.dtype)
    return total / float(rh * rw)


def loss_exp(out: Tensor, cfg: LossWeights) -> Tensor:
    y = region_means(luminance(out), cfg.exp_region)
    return T.mean(T.absolute(y - cfg.exposure))


def loss_cc(out: Tensor) -> Tensor:
    j = T.mean(T.reshape(out, (3, -1)), axis=1)
    r, g, b = j[0], j[1], j[2]
    return T.square(r - g) + T.square(r - b) + T.square(g - b)


def loss_tv(grid: AffineGrid | Tensor) -> Tensor:
    """Squared mean absolute forward differences per output-colour group, averaged over groups."""
    coeffs = grid.coeffs if isinstance(grid, AffineGrid) else grid
    _, gh, gw = coeffs.shape
    terms = []
    for c in range(3):
        maps = coeffs[4 * c : 4 * c + 4]
        grad = None
        if gw > 1:
            grad = T.mean(T.absolute(maps[:, :, 1:] - maps[:, :, :-1]))
        if gh > 1:
            gy = T.mean(T.absolute(maps[:, 1:, :] - maps[:, :-1, :]))
            grad = gy if grad is None else grad + gy
        if grad is not None:
            terms.append(T.square(grad))
    if not terms:
        return Tensor(0.0, dtype=coeffs.dtype)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total / 3.0


def loss_dbc(out: Tensor, cfg: LossWeights) -> Tensor:
    dark = T.mean(T.absolute(dark_channel(out, cfg.dbc_patch)))
    bright = T.mean(T.absolute(1.0 - bright_channel(out, cfg.dbc_patch)))
    return dark + bright


def loss_terms(out: Tensor, inp: Tensor, grid: AffineGrid | Tensor, cfg: LossWeights) -> dict[str, Tensor]:
    cfg.check_size(out.shape[1], out.shape[2])
    return {
        "dcp": loss_dcp(out, cfg),
        "spa": loss_spa(out, inp, cfg),
        "exp": loss_exp(out, cfg),
        "cc": loss_cc(out),
        "tv": loss_tv(grid),
        "dbc": loss_dbc(out, cfg),
    }


def loss_total(out: Tensor, inp: Tensor, grid: AffineGrid | Tensor, cfg: LossWeights | None = None):
    """Return ``(total_tensor, report)``; the tensor carries the gradient."""
    cfg = cfg or LossWeights()
    terms = loss_terms(out, inp, grid, cfg)
    total = LossReport.weighted(cfg, **terms)
    report = LossReport.from_terms(cfg, **{k: v.item() for k, v in terms.items()})
    return total, report

"""Finite-difference gradient checks shared by the unit and acceptance suites."""

import numpy as np

from oracles import central_difference, relative_errors
from zrudc import losses as L
from zrudc.gridnet import GridNetConfig, init_params
from zrudc.tensor import GradTape, Tensor
from zrudc.trainer import TrainConfig, image_loss

H = 1e-3
TOL = 1e-4

# region and patch sizes shrunk so every term is defined on an 8 x 8 image
SMALL = L.LossWeights(spa_region=4, exp_region=4, dcp_patch=3, dbc_patch=3)
TINY_NET = GridNetConfig(widths=(2, 3), proxy_size=8)


def pass_fractions(build, arrays, h=H, tol=TOL):
    """Fraction of entries per array whose tape gradient matches central differences."""
    tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    with GradTape() as tape:
        loss = build(tensors)
    analytic = tape.gradient(loss, tensors)
    numeric = central_difference(lambda: build({k: Tensor(v) for k, v in arrays.items()}).item(), arrays, h)
    return {k: float(np.mean(relative_errors(analytic[k], numeric[k]) < tol)) for k in arrays}


def separated(rng, shape, lo, hi):
    """Shuffled evenly spaced values; the spacing exceeds 2h so no min, max or |.| flips inside the stencil."""
    n = int(np.prod(shape))
    values = np.linspace(lo, hi, n)
    assert (hi - lo) / (n - 1) > 2 * H
    return rng.permutation(values).reshape(shape)


def loss_builders(rng):
    """(name, build, arrays) for each of the six terms on random float64 inputs."""
    out = separated(rng, (3, 8, 8), 0.05, 0.95)
    inp = rng.uniform(0.05, 0.95, (3, 8, 8))
    grid = separated(rng, (12, 4, 4), -2.0, 2.0)
    fixed = Tensor(inp)
    return [
        ("dcp", lambda t: L.loss_dcp(t["x"], SMALL), {"x": out}),
        ("spa", lambda t: L.loss_spa(t["x"], fixed, SMALL), {"x": out}),
        ("exp", lambda t: L.loss_exp(t["x"], SMALL), {"x": out}),
        ("cc", lambda t: L.loss_cc(t["x"]), {"x": out}),
        ("tv", lambda t: L.loss_tv(t["g"]), {"g": grid}),
        ("dbc", lambda t: L.loss_dbc(t["x"], SMALL), {"x": out}),
    ]


def end_to_end_fraction(seed: int, pool_kernel=3, h=H) -> float:
    """Pass fraction over every network parameter for the weighted total on an 8 x 8 image."""
    rng = np.random.default_rng(seed)
    params = init_params(TINY_NET, seed=seed, head_scale=1.0, dtype=np.float64)
    arrays = {k: v.copy() for k, v in params.arrays().items()}
    # move the decompress kernel off the group-sum delta so its gradient is generic
    arrays["decompress.weight"] += 0.1 * rng.standard_normal(arrays["decompress.weight"].shape)
    raw = rng.uniform(0.05, 0.95, (3, 8, 8))
    cfg = TrainConfig(widths=TINY_NET.widths, proxy_size=8, pool_kernel=pool_kernel, weights=SMALL)
    _, analytic = image_loss(raw, params.with_arrays(arrays), cfg)
    numeric = central_difference(
        lambda: image_loss(raw, params.with_arrays(arrays), cfg, with_grad=False)[0].total, arrays, h
    )
    errs = np.concatenate([relative_errors(analytic[k], numeric[k]) for k in arrays])
    return float(np.mean(errs < TOL))

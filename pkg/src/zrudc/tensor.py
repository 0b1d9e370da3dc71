"""Dense float tensors with a small reverse-mode tape.

Only the operations the enhancement pipeline needs are provided. Every
operation is a pure function of its inputs; when a :class:`GradTape` is
active and at least one input requires a gradient, the operation appends an
adjoint closure to the tape. Replaying the closures in reverse execution
order yields exact gradients.

Arrays are stored as row-major numpy arrays. Single precision is the default;
float64 inputs stay float64, which is what the gradient-check tests rely on.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

_tape_stack: list["GradTape"] = []


class Tensor:
    """N-dimensional float array that can take part in a :class:`GradTape`."""

    __slots__ = ("data", "requires_grad")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(d < 1 for d in arr.shape):
            raise ValueError(f"tensor dimensions must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, index):
        return getitem(self, index)


class GradTape:
    """Ordered record of differentiable operations executed inside a ``with`` block.

    The tape is single-writer: one training step records into one tape and
    consumes it with :meth:`gradient`.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], adjoint: Callable) -> None:
        self._records.append((out, inputs, adjoint))

    def gradient(self, loss: Tensor, sources: Mapping[str, Tensor] | Sequence[Tensor]):
        """Replay adjoints in reverse order and return d(loss)/d(source).

        ``sources`` may be a mapping (a dict of gradients is returned) or a
        sequence (a list is returned). Sources the loss does not depend on get
        a zero gradient.
        """
        if loss.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, adjoint in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, adjoint(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        if isinstance(sources, Mapping):
            return {name: _grad_for(t, grads, loss) for name, t in sources.items()}
        return [_grad_for(t, grads, loss) for t in sources]


def _grad_for(t: Tensor, grads: dict[int, np.ndarray], loss: Tensor) -> np.ndarray:
    if t is loss:
        return np.ones_like(t.data)
    g = grads.get(id(t))
    if g is None:
        return np.zeros_like(t.data)
    return g.astype(t.dtype, copy=False).reshape(t.shape)


def backward(loss: Tensor, tape: GradTape, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradient of a scalar ``loss`` for every named parameter."""
    return tape.gradient(loss, params)


def no_tape_active() -> bool:
    return not _tape_stack


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(out: np.ndarray, inputs: tuple[Tensor, ...], adjoint: Callable) -> Tensor:
    result = Tensor(out)
    if _tape_stack and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        _tape_stack[-1].record(result, inputs, adjoint)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _scatter(flat_index: np.ndarray, values: np.ndarray, shape, dtype) -> np.ndarray:
    """Sum ``values`` into a zero array of ``shape`` at flat positions (fixed order)."""
    size = int(np.prod(shape))
    out = np.bincount(flat_index.ravel(), weights=values.ravel(), minlength=size)
    return out.astype(dtype, copy=False).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic and reductions


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    x = a.data
    return _make(x**exponent, (a,), lambda g: (g * exponent * x ** (exponent - 1),))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2 * g * x,))


def absolute(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _make(np.clip(x, lo, hi), (a,), lambda g: (np.where(inside, g, 0),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), adjoint)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[ax] for ax in axes]))

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims), dtype=a.dtype)
    return _make(out, (a,), adjoint)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)

    def adjoint(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), adjoint)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def adjoint(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, adjoint)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)

    def adjoint(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, adjoint)


def amin(a: Tensor, axis: int = 0) -> Tensor:
    """Minimum along ``axis``; the gradient goes to the first minimal entry."""
    return _arg_reduce(a, axis, np.argmin)


def amax(a: Tensor, axis: int = 0) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    return _arg_reduce(a, axis, np.argmax)


def _arg_reduce(a: Tensor, axis: int, argfn) -> Tensor:
    idx = np.expand_dims(argfn(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)
    shape, dtype = a.shape, a.dtype

    def adjoint(g):
        full = np.zeros(shape, dtype=dtype)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(out, (a,), adjoint)


# ---------------------------------------------------------------------------
# image operators


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    cin = xp.shape[0]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    return win.transpose(0, 3, 4, 1, 2).reshape(cin * k * k, ho * wo), ho, wo


def conv2d_array(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Forward-only cross-correlation on plain arrays (used by the tiled inference path)."""
    k = w.shape[-1]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    cols, ho, wo = _im2col(xp, k, stride)
    out = w.reshape(w.shape[0], -1) @ cols
    if b is not None:
        out += b[:, None]
    return out.reshape(w.shape[0], ho, wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a ``C_in x H x W`` input with ``C_out x C_in x k x k`` weights."""
    if x.ndim != 3 or weight.ndim != 4:
        raise ValueError(f"conv2d expects a 3-D input and 4-D weight, got {x.shape} and {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if x.shape[0] != cin:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[0]} channels, weight expects {cin} (weight shape {weight.shape})"
        )
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d kernel must be square and odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} or padding={padding}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} does not match {cout} output channels")
    k = kh
    _, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if xp.shape[1] < k or xp.shape[2] < k:
        raise ValueError(f"conv2d input {x.shape} with padding {padding} is smaller than kernel {k}")
    cols, ho, wo = _im2col(xp, k, stride)
    wmat = weight.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(cout, ho, wo)
    hp, wp = xp.shape[1], xp.shape[2]

    def adjoint(g):
        g2 = g.reshape(cout, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(cin, k, k, ho, wo)
            gxp = np.zeros((cin, hp, wp), dtype=g.dtype)
            for a in range(k):
                for c in range(k):
                    gxp[:, a : a + stride * (ho - 1) + 1 : stride, c : c + stride * (wo - 1) + 1 : stride] += gcols[:, a, c]
            gx = gxp[:, padding : padding + h, padding : padding + w]
        return (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, inputs, adjoint)


def pooled_size(n: int, kernel: int, stride: int) -> int:
    """Ceil-mode output length; a kernel longer than the input gives one cell."""
    if n <= kernel:
        return 1
    return -(-(n - kernel) // stride) + 1


def maxpool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Ceil-mode max pooling with windows clipped at the bottom/right borders.

    Ties route the gradient to the first maximal element in row-major scan
    order of the window.
    """
    stride = kernel if stride is None else stride
    if kernel < 1 or stride < 1:
        raise ValueError(f"maxpool2d needs kernel >= 1 and stride >= 1, got kernel={kernel}, stride={stride}")
    if x.ndim != 3:
        raise ValueError(f"maxpool2d expects C x H x W, got {x.shape}")
    c, h, w = x.shape
    ho, wo = pooled_size(h, kernel, stride), pooled_size(w, kernel, stride)
    need_h, need_w = (ho - 1) * stride + kernel, (wo - 1) * stride + kernel
    xp = x.data
    if need_h > h or need_w > w:
        xp = np.pad(xp, ((0, 0), (0, need_h - h), (0, need_w - w)), constant_values=-np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    win = win.reshape(c, ho, wo, kernel * kernel)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def adjoint(g):
        rows = np.arange(ho)[None, :, None] * stride + arg // kernel
        cols = np.arange(wo)[None, None, :] * stride + arg % kernel
        flat = (np.arange(c)[:, None, None] * h + rows) * w + cols
        return (_scatter(flat, g, (c, h, w), g.dtype),)

    return _make(np.ascontiguousarray(out), (x,), adjoint)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """``x`` where non-negative, ``slope * x`` elsewhere; one shared learnable slope."""
    if slope.size != 1:
        raise ValueError(f"prelu slope must be a single scalar, got shape {slope.shape}")
    xd = x.data
    a = slope.data.reshape(())
    neg_mask = xd < 0
    out = np.where(neg_mask, a * xd, xd)

    def adjoint(g):
        gx = np.where(neg_mask, a * g, g)
        ga = np.asarray(np.sum(np.where(neg_mask, g * xd, 0)), dtype=slope.dtype).reshape(slope.shape)
        return (gx, ga)

    return _make(out, (x, slope), adjoint)


def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense ``n_out x n_in`` matrix of the half-pixel linear interpolation weights."""
    i0, i1, frac = _axis_weights(n_in, n_out)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def resize_rows_array(x: np.ndarray, out_h: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Interpolate along axis 1 of ``x`` (C x H x W), producing output rows ``start:stop``."""
    i0, i1, frac = _axis_weights(x.shape[1], out_h)
    sel = slice(start, stop)
    i0, i1, frac = i0[sel], i1[sel], frac[sel].astype(x.dtype)
    lo = x[:, i0, :]
    return lo + frac[None, :, None] * (x[:, i1, :] - lo)


def resize_cols_array(x: np.ndarray, out_w: int) -> np.ndarray:
    i0, i1, frac = _axis_weights(x.shape[2], out_w)
    lo = x[:, :, i0]
    return lo + frac.astype(x.dtype)[None, None, :] * (x[:, :, i1] - lo)


def bilinear_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if x.shape[2] != out_w:
        x = resize_cols_array(x, out_w)
    if x.shape[1] != out_h:
        x = resize_rows_array(x, out_h)
    return x


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling with half-pixel centres; borders extend the edge sample.

    Each output is computed as ``a + t * (b - a)`` so constants and same-size
    resizes are reproduced exactly.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    if x.ndim != 3:
        raise ValueError(f"bilinear_resize expects C x H x W, got {x.shape}")
    _, h, w = x.shape
    out = bilinear_array(x.data, out_h, out_w)

    def adjoint(g):
        ry = interpolation_matrix(h, out_h).astype(g.dtype)
        rx = interpolation_matrix(w, out_w).astype(g.dtype)
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return _make(np.ascontiguousarray(out), (x,), adjoint)


def _sliding_arg(x: np.ndarray, patch: int, axis: int, argfn):
    """Windowed arg-extremum along one axis with edge replication, stride 1."""
    r = patch // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (r, r)
    xp = np.pad(x, pad, mode="edge")
    win = sliding_window_view(xp, patch, axis=axis)
    off = argfn(win, axis=-1)
    src = np.arange(x.shape[axis]).reshape([-1 if ax == axis else 1 for ax in range(x.ndim)])
    idx = np.clip(src + off - r, 0, x.shape[axis] - 1)
    return idx


def _window_extreme(x: Tensor, patch: int, argfn) -> Tensor:
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch must be an odd positive integer, got {patch}")
    if x.ndim != 2:
        raise ValueError(f"window filter expects an H x W map, got {x.shape}")
    h, w = x.shape
    d = x.data
    col_idx = _sliding_arg(d, patch, 1, argfn)  # H x W, source column per row pass
    rowpass = np.take_along_axis(d, col_idx, axis=1)
    row_idx = _sliding_arg(rowpass, patch, 0, argfn)  # H x W, source row per column pass
    src_col = np.take_along_axis(col_idx, row_idx, axis=0)
    out = d[row_idx, src_col]

    def adjoint(g):
        return (_scatter(row_idx * w + src_col, g, (h, w), g.dtype),)

    return _make(out, (x,), adjoint)


def min_filter2d(x: Tensor, patch: int) -> Tensor:
    """Minimum over a ``patch x patch`` neighbourhood, edges replicated."""
    return _window_extreme(x, patch, np.argmin)


def max_filter2d(x: Tensor, patch: int) -> Tensor:
    """Maximum over a ``patch x patch`` neighbourhood, edges replicated."""
    return _window_extreme(x, patch, np.argmax)


def parameters_finite(tensors: Iterable[Tensor]) -> bool:
    return all(np.isfinite(t.data).all() for t in tensors)

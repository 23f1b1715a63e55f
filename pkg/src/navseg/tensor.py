"""Dense float64 tensors with a recording tape and hand-written VJPs.

Every differentiable operation here takes :class:`Tensor` (or plain arrays,
treated as constants), computes its forward value with numpy, and, when any
input lives on a :class:`Tape`, records a closure that maps the upstream
gradient to gradients for each input. ``Tape.backward`` replays the records
in reverse order exactly once.

Operations accept arbitrary leading (batch) axes; shapes in the docstrings
refer to the trailing axes.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .exceptions import ShapeError, TapeError

LOG_FLOOR = 1e-12


class Tensor:
    """Immutable value plus an optional link to the tape that produced it."""

    __slots__ = ("data", "tape", "grad", "name")

    def __init__(self, data, tape: "Tape | None" = None, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, taped={self.tape is not None})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of operations, consumed by a single backward pass."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple, Callable]] = []
        self._leaves: list[Tensor] = []
        self._consumed = False

    def __len__(self):
        return len(self._records)

    def watch(self, data, name: str | None = None) -> Tensor:
        """Register a leaf (parameter or input) whose gradient is wanted."""
        if self._consumed:
            raise TapeError("tape already consumed by backward()")
        t = Tensor(np.array(data, dtype=np.float64), tape=self, name=name)
        self._leaves.append(t)
        return t

    def record(self, out: np.ndarray, inputs: Sequence, vjp: Callable) -> Tensor:
        if self._consumed:
            raise TapeError("tape already consumed by backward()")
        out = np.asarray(out, dtype=np.float64)
        out.flags.writeable = False
        t = Tensor(out, tape=self)
        self._records.append((t, tuple(inputs), vjp))
        return t

    def backward(self, loss: Tensor, loss_grad: float = 1.0) -> dict[Tensor, np.ndarray]:
        """Propagate ``loss_grad`` from scalar ``loss`` back to every leaf.

        Returns a mapping leaf -> gradient and also stores each gradient on
        the leaf's ``grad`` attribute.
        """
        if self._consumed:
            raise TapeError("tape already consumed by backward()")
        if loss.tape is not self:
            raise TapeError("loss was not produced on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.full(loss.shape, float(loss_grad))}
        for out, inputs, vjp in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not isinstance(inp, Tensor) or inp.tape is not self:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        result = {}
        for leaf in self._leaves:
            leaf.grad = grads.get(id(leaf), np.zeros_like(leaf.data))
            result[leaf] = leaf.grad
        self._records.clear()
        return result


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            return x.tape
    return None


def _emit(out: np.ndarray, inputs: Sequence, vjp: Callable) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(np.asarray(out))
    return tape.record(out, inputs, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None
    sa, sb = a.shape, b.shape
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    v = x.data
    v2 = v * v
    t = np.tanh(_GELU_C * v * (1.0 + 0.044715 * v2))
    out = 0.5 * v * (1.0 + t)

    def vjp(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner),)

    return _emit(out, (x,), vjp)


def log_clamped(x, floor: float = LOG_FLOOR) -> Tensor:
    """``log(max(x, floor))``; gradient is zero where the floor is active."""
    x = as_tensor(x)
    v = x.data
    safe = np.maximum(v, floor)
    live = v > floor
    return _emit(np.log(safe), (x,), lambda g: (np.where(live, g / safe, 0.0),))


# --- reductions -----------------------------------------------------------


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _emit(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_axes(x, axes: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axes)

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return _emit(out, (x,), vjp)


# --- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes: [..., M, K] @ [..., K, N]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _emit(out, (a, b), vjp)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` with x [..., C_in], w [C_in, C_out], b [C_out]."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear shape mismatch: x {x.shape}, w {w.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear bias shape {b.shape} does not match w {w.shape}")
    xd, wd = x.data, w.data
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    if b is not None:
        out += b.data
    out = out.reshape(xd.shape[:-1] + (wd.shape[1],))

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        gb = g2.sum(axis=0)
        return gx, gw, gb

    return _emit(out, (x, w, b), vjp)


# --- softmax -----------------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _emit(s, (x,), vjp)


def softmax_rows(x) -> Tensor:
    """Row-wise softmax of an [..., M, N] tensor (max-subtracted)."""
    return softmax(x, axis=-1)


# --- layout ---------------------------------------------------------------------


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from None
    return _emit(out.copy(), (x,), lambda g: (g.reshape(src),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    out = np.ascontiguousarray(np.swapaxes(x.data, a1, a2))
    return _emit(out, (x,), lambda g: (np.ascontiguousarray(np.swapaxes(g, a1, a2)),))


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = x.shape
    out = x.data[index].copy()

    def vjp(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _emit(out, (x,), vjp)


def concat(parts: Sequence, axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of an empty list")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat shape mismatch: {[p.shape for p in parts]}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(s) for s in np.split(g, bounds, axis=axis))

    return _emit(out, parts, vjp)


def concat_channels(parts: Sequence) -> Tensor:
    """Concatenate [..., C_i, H, W] tensors along the channel axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_channels of an empty list")
    ref = parts[0].shape
    for p in parts:
        if p.ndim < 3 or p.shape[-2:] != ref[-2:] or p.shape[:-3] != ref[:-3]:
            raise ShapeError(f"concat_channels spatial mismatch: {[q.shape for q in parts]}")
    return concat(parts, axis=-3)


def diagonal(x) -> Tensor:
    """Main diagonal of the last two (square) axes: [..., L, L] -> [..., L]."""
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ShapeError(f"diagonal needs square trailing axes, got {x.shape}")
    n = x.shape[-1]
    shape = x.shape
    idx = np.arange(n)
    out = x.data[..., idx, idx].copy()

    def vjp(g):
        full = np.zeros(shape)
        full[..., idx, idx] = g
        return (full,)

    return _emit(out, (x,), vjp)


# --- resampling ---------------------------------------------------------------


def _bilinear_taps(n_in: int, n_out: int):
    """Source taps for half-pixel-centre interpolation along one axis."""
    scale_ = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale_ - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    return i0, i1, w


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    i0, i1, w = _bilinear_taps(n_in, n_out)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w)
    np.add.at(m, (rows, i1), w)
    return m


def _lerp_axis(v: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    i0, i1, w = _bilinear_taps(v.shape[axis], n_out)
    a = np.take(v, i0, axis=axis)
    b = np.take(v, i1, axis=axis)
    shape = [1] * v.ndim
    shape[axis] = n_out
    # a + w*(b-a) keeps constant fields bit-exact
    return a + w.reshape(shape) * (b - a)


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Resize the last two axes with half-pixel-centre bilinear interpolation.

    Source coordinate is ``(dst + 0.5) * in/out - 0.5``, clamped to the
    valid range. The backward pass applies the transposed interpolation.
    """
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be positive, got {out_h}x{out_w}")
    if x.ndim < 2:
        raise ShapeError(f"bilinear_resize needs at least 2 axes, got {x.shape}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return _emit(x.data.copy(), (x,), lambda g: (g,))
    out = _lerp_axis(_lerp_axis(x.data, x.ndim - 2, out_h), x.ndim - 1, out_w)
    mh = _interp_matrix(h, out_h)
    mw = _interp_matrix(w, out_w)

    def vjp(g):
        return (mh.T @ g @ mw,)

    return _emit(out, (x,), vjp)


# --- patches ----------------------------------------------------------------------


def _patch_index(c: int, hp: int, wp: int, window: int, stride: int):
    h_out = (hp - window) // stride + 1
    w_out = (wp - window) // stride + 1
    ch = np.arange(c)[:, None, None] * (hp * wp)
    ky = np.arange(window)[None, :, None] * wp
    kx = np.arange(window)[None, None, :]
    offsets = (ch + ky + kx).reshape(-1)
    oy = np.arange(h_out)[:, None] * stride * wp
    ox = np.arange(w_out)[None, :] * stride
    starts = (oy + ox).reshape(-1)
    return starts[:, None] + offsets[None, :], h_out, w_out


def unfold(x, window: int, stride: int, pad: int = 0):
    """Extract sliding windows: [..., C, H, W] -> ([..., L, C*window*window], H', W').

    Each row is a window flattened in (channel, row, column) order; rows
    are in row-major output order. Zero padding of ``pad`` on every side.
    """
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"unfold needs [..., C, H, W], got {x.shape}")
    *lead, c, h, w = x.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    if window > hp or window > wp or window < 1 or stride < 1:
        raise ShapeError(f"window {window} does not fit padded extent {hp}x{wp}")
    idx, h_out, w_out = _patch_index(c, hp, wp, window, stride)
    xd = x.data
    if pad:
        widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
        xd = np.pad(xd, widths)
    flat = xd.reshape(*lead, c * hp * wp)
    out = flat[..., idx]
    shape = x.shape

    def vjp(g):
        g2 = g.reshape(-1, idx.size)
        n = g2.shape[0]
        offs = (np.arange(n) * (c * hp * wp))[:, None] + idx.reshape(1, -1)
        acc = np.bincount(offs.ravel(), weights=g2.ravel(), minlength=n * c * hp * wp)
        acc = acc.reshape(*lead, c, hp, wp)
        if pad:
            acc = acc[..., pad:pad + shape[-2], pad:pad + shape[-1]]
        return (np.ascontiguousarray(acc),)

    return _emit(out, (x,), vjp), h_out, w_out


def parameters_of(tape: Tape, arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """Watch every named array on ``tape``."""
    return {k: tape.watch(v, name=k) for k, v in arrays.items()}


def constants(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, name=k) for k, v in arrays.items()}


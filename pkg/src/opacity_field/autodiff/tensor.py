"""Tape-based reverse-mode automatic differentiation on top of numpy.

Every differentiable op produces a new :class:`Tensor`. When any input
requires a gradient (and recording is enabled) the output is appended to the
active thread's tape together with a closure that maps the output gradient
onto the input gradients. :func:`backward` replays the tape in reverse.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


_state = threading.local()
_DEFAULT_DTYPE = [np.float32]


def get_default_dtype():
    return _DEFAULT_DTYPE[0]


def set_default_dtype(dtype) -> None:
    _DEFAULT_DTYPE[0] = np.dtype(dtype).type


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the engine-wide float precision."""
    old = _DEFAULT_DTYPE[0]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE[0] = old


class Tape:
    """Ordered record of graph nodes; creation order is a topological order."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


def _tls():
    if not hasattr(_state, "tape"):
        _state.tape = Tape()
        _state.enabled = True
    return _state


def get_tape() -> Tape:
    return _tls().tape


@contextlib.contextmanager
def tape_scope():
    """Run a block against a fresh tape, discarding it on exit."""
    st = _tls()
    old = st.tape
    st.tape = Tape()
    try:
        yield st.tape
    finally:
        st.tape.clear()
        st.tape = old


@contextlib.contextmanager
def no_grad():
    st = _tls()
    old = st.enabled
    st.enabled = False
    try:
        yield
    finally:
        st.enabled = old


def _as_array(x, dtype=None):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=dtype or get_default_dtype())


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """n-dimensional array that can take part in gradient recording."""

    __array_priority__ = 100
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or get_default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    # -- arithmetic ----------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        return power(self, p)

    # -- method forms ----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def cumsum(self, axis):
        return cumsum(self, axis)


def _make(data: np.ndarray, parents: Sequence, backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    st = _tls()
    track = st.enabled and any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward
        st.tape.record(out)
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t, g: np.ndarray) -> None:
    if not isinstance(t, Tensor) or not t.requires_grad:
        return
    if t.grad is None:
        # grads are never updated in place, so the incoming array can be shared
        t.grad = np.asarray(g, dtype=t.data.dtype)
    else:
        t.grad = t.grad + g


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _lift(x) -> Tensor | np.ndarray:
    return x if isinstance(x, Tensor) else np.asarray(x, dtype=get_default_dtype())


def _shape_of(x):
    return x.shape if isinstance(x, (Tensor, np.ndarray)) else np.shape(x)


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(_shape_of(a), _shape_of(b))
    except ValueError:
        raise ShapeError(op, _shape_of(a), _shape_of(b)) from None


# ---------------------------------------------------------------------------
# element-wise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_check("add", a, b)
    ad, bd = _as_array(a), _as_array(b)

    def bw(g):
        _accum(a, _unbroadcast(g, ad.shape))
        _accum(b, _unbroadcast(g, bd.shape))

    return _make(ad + bd, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_check("sub", a, b)
    ad, bd = _as_array(a), _as_array(b)

    def bw(g):
        _accum(a, _unbroadcast(g, ad.shape))
        _accum(b, _unbroadcast(-g, bd.shape))

    return _make(ad - bd, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_check("mul", a, b)
    ad, bd = _as_array(a), _as_array(b)

    def bw(g):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, _unbroadcast(g * bd, ad.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            _accum(b, _unbroadcast(g * ad, bd.shape))

    return _make(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_check("div", a, b)
    ad, bd = _as_array(a), _as_array(b)
    out = ad / bd

    def bw(g):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, _unbroadcast(g / bd, ad.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            _accum(b, _unbroadcast(-g * out / bd, bd.shape))

    return _make(out, (a, b), bw)


def square(x: Tensor) -> Tensor:
    xd = x.data

    def bw(g):
        _accum(x, 2.0 * g * xd)

    return _make(xd * xd, (x,), bw)


def power(x: Tensor, p: float) -> Tensor:
    """``x ** p`` for a constant exponent."""
    xd = x.data

    def bw(g):
        _accum(x, g * p * xd ** (p - 1))

    return _make(xd ** p, (x,), bw)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def bw(g):
        _accum(x, g * out)

    return _make(out, (x,), bw)


def log(x: Tensor) -> Tensor:
    xd = x.data

    def bw(g):
        _accum(x, g / xd)

    return _make(np.log(xd), (x,), bw)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def bw(g):
        _accum(x, g * 0.5 / out)

    return _make(out, (x,), bw)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bw(g):
        _accum(x, g * (out > 0))

    return _make(out, (x,), bw)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)

    def bw(g):
        _accum(x, g * scale)

    return _make(x.data * scale, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)

    def bw(g):
        _accum(x, g * out * (1.0 - out))

    return _make(out, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - out * out))

    return _make(out, (x,), bw)


def softplus(x: Tensor) -> Tensor:
    xd = x.data

    def bw(g):
        _accum(x, g * expit(xd))

    return _make(np.logaddexp(0, xd).astype(xd.dtype), (x,), bw)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)

    def bw(g):
        _accum(x, g * inside)

    return _make(np.clip(xd, lo, hi), (x,), bw)


# ---------------------------------------------------------------------------
# shape / reduction
# ---------------------------------------------------------------------------

def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, shape))

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, shape) from None

    def bw(g):
        _accum(x, g.reshape(old))

    return _make(out, (x,), bw)


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        _accum(x, np.transpose(g, inv))

    return _make(np.transpose(x.data, axes), (x,), bw)


def getitem(x: Tensor, idx) -> Tensor:
    fancy = isinstance(idx, (np.ndarray, list)) or (
        isinstance(idx, tuple) and any(isinstance(i, (np.ndarray, list)) for i in idx)
    )

    def bw(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        _accum(x, full)

    return _make(x.data[idx], (x,), bw)


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    items = [_lift(t) for t in tensors]
    arrays = [_as_array(t) for t in items]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise ShapeError("concat", *[a.shape for a in arrays]) from None
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def bw(g):
        for t, piece in zip(items, np.split(g, bounds, axis=axis)):
            _accum(t, piece)

    return _make(out, items, bw)


def cumsum(x: Tensor, axis: int) -> Tensor:
    def bw(g):
        _accum(x, np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))

    return _make(np.cumsum(x.data, axis=axis), (x,), bw)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = _as_array(a), _as_array(b)
    if ad.ndim < 1 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError("matmul", ad.shape, bd.shape)

    def bw(g):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            if ad.ndim == 2 and bd.ndim == 2:
                _accum(b, ad.T @ g)
            else:
                _accum(b, _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))

    return _make(ad @ bd, (a, b), bw)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """NCHW cross-correlation with zero padding.

    ``padding=None`` selects ``(k - 1) // 2``, which keeps the spatial size at
    stride 1 for odd kernels.
    """
    xd, wd = _as_array(x), _as_array(weight)
    if xd.ndim != 4 or wd.ndim != 4 or xd.shape[1] != wd.shape[1]:
        raise ShapeError("conv2d", xd.shape, wd.shape)
    n, c, h, w = xd.shape
    o, _, kh, kw = wd.shape
    p = (kh - 1) // 2 if padding is None else padding
    ho = (h + 2 * p - kh) // stride + 1
    wo = (w + 2 * p - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d", xd.shape, wd.shape)
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = wd.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + _as_array(bias)
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if isinstance(weight, Tensor) and weight.requires_grad:
            _accum(weight, (g2.T @ cols).reshape(wd.shape))
        if bias is not None and isinstance(bias, Tensor) and bias.requires_grad:
            _accum(bias, g2.sum(axis=0))
        if isinstance(x, Tensor) and x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros(xp.shape, dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            _accum(x, dxp[:, :, p:p + h, p:p + w])

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(np.ascontiguousarray(out), parents, bw)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling of an NCHW tensor."""
    xd = x.data
    n, c, h, w = xd.shape

    def bw(g):
        _accum(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(np.repeat(np.repeat(xd, 2, axis=2), 2, axis=3), (x,), bw)


def avg_pool2x(x: Tensor) -> Tensor:
    xd = x.data
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError("avg_pool2x", xd.shape)

    def bw(g):
        _accum(x, np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25)

    return _make(xd.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)), (x,), bw)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor, retain_tape: bool = False) -> None:
    """Populate ``.grad`` for every recorded ancestor of ``loss``.

    Unless ``retain_tape`` is set, the active tape is cleared afterwards.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = get_tape()
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tensor requiring grad")
    if loss._backward is None and not tape.nodes:
        raise ValueError("backward: tape is empty")
    loss.grad = np.ones_like(loss.data)
    nodes = tape.nodes
    try:
        stop = next(i for i in range(len(nodes) - 1, -1, -1) if nodes[i] is loss)
    except StopIteration:
        raise ValueError("backward: loss was not recorded on the active tape") from None
    for node in reversed(nodes[: stop + 1]):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)
        # interior grads are transient; only leaves keep them
        node.grad = None
    if not retain_tape:
        tape.clear()


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    return float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None)))

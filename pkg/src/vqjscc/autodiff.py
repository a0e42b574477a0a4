"""Dense tensors with reverse-mode differentiation.

Every differentiable operation records a node (parents, local backward
closure, sequence number). ``Tensor.backward`` replays the recorded nodes
reachable from the loss in exact reverse execution order and accumulates
gradients additively into every ``requires_grad`` tensor it visits.

Shapes are strict: elementwise binary ops require equal shapes (a Python
scalar operand is allowed). Broadcasting is explicit via :func:`expand`,
and the convolution ops take their bias directly.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError

__all__ = [
    "Tensor", "tensor", "no_grad", "precision", "get_default_dtype", "set_default_dtype",
    "add", "sub", "mul", "div", "neg", "square", "sqrt", "tanh", "softplus", "prelu",
    "matmul", "sum", "mean", "expand", "reshape", "transpose", "concat", "take",
    "detach", "ste", "conv2d", "tconv2d", "conv1d", "grad_check",
]

_seq = itertools.count()
_local = threading.local()
_default_dtype = np.float32


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (this thread only)."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the default float type: ``"f32"`` or ``"f64"``."""
    prev = _default_dtype
    set_default_dtype({"f32": np.float32, "f64": np.float64}[name])
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """n-dimensional real array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "__weakref__")

    __array_priority__ = 100  # keep numpy from hijacking ``ndarray * Tensor``

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype or _default_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = -1

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._parents = ()
        t._backward = None
        t._seq = -1
        return t

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def detach(self):
        return detach(self)

    # -- differentiation ------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable tensor."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires grad")
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t._backward is not None:
                nodes.append(t)
                stack.extend(p for p in t._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._seq, reverse=True)

        pending = {id(self): (self, np.ones_like(self.data))}
        for node in nodes:
            _, g = pending.pop(id(node))
            _accumulate(node, g)
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = (parent, pending[key][1] + pg)
                else:
                    pending[key] = (parent, pg)
        for leaf, g in pending.values():
            _accumulate(leaf, g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _default_dtype
    return Tensor._wrap(np.asarray(x, dtype=dtype), False)


def _node(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    req = _grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, req)
    if req:
        out._parents = parents
        out._backward = backward
        out._seq = next(_seq)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        bad = [i for i, (x, y) in enumerate(itertools.zip_longest(a.shape, b.shape)) if x != y]
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ on axes {bad}")


def _is_scalar(x) -> bool:
    return not isinstance(x, Tensor) and np.ndim(x) == 0


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = _as_tensor(a)
        return _node(a.data + a.data.dtype.type(b), (a,), lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        a = _as_tensor(a)
        c = a.data.dtype.type(b)
        return _node(a.data * c, (a,), lambda g: (g * c,))
    if _is_scalar(a):
        return mul(b, a)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    if _is_scalar(b):
        return mul(a, 1.0 / b)
    if _is_scalar(a):
        a = _as_tensor(a, b)
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, (a, b), lambda g: (g / bd, -g * out / bd))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2 * g * ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g / (2 * out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1 - out * out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), evaluated stably."""
    ad = a.data
    out = np.logaddexp(0, ad)
    return _node(out, (a,), lambda g: (g * np.exp(-np.logaddexp(0, -ad)),))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Leaky ReLU with a single learnable negative-side slope of shape (1,)."""
    if slope.shape != (1,):
        raise ShapeError(f"prelu slope must have shape (1,), got {slope.shape}")
    xd = x.data
    pos = xd > 0
    a = slope.data[0]

    def back(g):
        return np.where(pos, g, a * g), np.array([np.sum(np.where(pos, 0, xd * g))], dtype=xd.dtype)

    return _node(np.where(pos, xd, a * xd), (x, slope), back)


# ---------------------------------------------------------------------------
# linear algebra, reductions, shape ops
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner axes differ, {a.shape}[-1] vs {b.shape}[-2]")
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _node(ad @ bd, (a, b), back)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis, keepdims), 1.0 / n)


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape`` (numpy rules)."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"cannot expand {a.shape} to {shape}") from exc
    src = a.shape
    return _node(out, (a,), lambda g: (_unbroadcast(g, src),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return _node(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _getitem(a: Tensor, key) -> Tensor:
    if isinstance(key, (np.ndarray, list)) or (
        isinstance(key, tuple) and any(isinstance(k, (np.ndarray, list)) for k in key)
    ):
        raise TypeError("use take() for integer-array indexing")
    shape, dtype = a.shape, a.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        out[key] = g
        return (out,)

    return _node(a.data[key], (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    return _node(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather rows ``a[indices]`` along axis 0; gradient scatters additively."""
    if axis != 0:
        raise ValueError("take() supports axis=0 only")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"take: index out of range for axis of length {a.shape[0]}")
    shape, dtype = a.shape, a.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), back)


def detach(a: Tensor) -> Tensor:
    """Stop-gradient copy sharing the same values."""
    return Tensor._wrap(a.data, False)


def ste(y: Tensor, yq: Tensor) -> Tensor:
    """Straight-through bridge: forward value ``yq``, identity gradient into ``y``."""
    _same_shape(y, yq, "ste")
    return _node(yq.data.copy(), (y,), lambda g: (g,))


# ---------------------------------------------------------------------------
# convolutions (cross-correlation, optional leading batch axis)
# ---------------------------------------------------------------------------

def _windows(xp: np.ndarray, fh: int, fw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (fh, fw), axis=(2, 3))
    return win[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def _conv_forward(x, w, stride, pad):
    """x (B,Ci,H,W), w (Co,Ci,fh,fw) -> (B,Co,Ho,Wo) plus the window view."""
    (sh, sw), (ph, pw) = stride, pad
    fh, fw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    ho = (xp.shape[2] - fh) // sh + 1
    wo = (xp.shape[3] - fw) // sw + 1
    win = _windows(xp, fh, fw, sh, sw, ho, wo)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (B,Ho,Wo,Co)
    return out.transpose(0, 3, 1, 2), win


def _conv_adjoint(g, w, stride, pad, out_hw):
    """Adjoint of :func:`_conv_forward` in x: g (B,Co,Ho,Wo) -> (B,Ci,H,W)."""
    (sh, sw), (ph, pw) = stride, pad
    fh, fw = w.shape[2:]
    h, wd = out_hw
    b, _, ho, wo = g.shape
    cols = np.tensordot(g, w, axes=([1], [0]))  # (B,Ho,Wo,Ci,fh,fw)
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # (B,Ci,fh,fw,Ho,Wo)
    full = np.zeros((b, w.shape[1], max(h + 2 * ph, (ho - 1) * sh + fh), max(wd + 2 * pw, (wo - 1) * sw + fw)), dtype=g.dtype)
    for i in range(fh):
        for j in range(fw):
            full[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += cols[:, :, i, j]
    return full[:, :, ph : ph + h, pw : pw + wd]


def _check_conv(x: Tensor, w: Tensor, b: Tensor | None, spatial: int, cin_axis: int, cout_axis: int, name: str):
    if x.ndim not in (spatial + 1, spatial + 2):
        raise ShapeError(f"{name}: input must be {spatial + 1}-d or batched {spatial + 2}-d, got {x.shape}")
    if w.ndim != spatial + 2:
        raise ShapeError(f"{name}: weight must be {spatial + 2}-d, got {w.shape}")
    cin = x.shape[-spatial - 1]
    if w.shape[cin_axis] != cin:
        raise ShapeError(
            f"{name}: input channel axis ({cin}) does not match weight axis {cin_axis} ({w.shape[cin_axis]})"
        )
    if b is not None and b.shape != (w.shape[cout_axis],):
        raise ShapeError(f"{name}: bias shape {b.shape} does not match weight axis {cout_axis} ({w.shape[cout_axis]})")


def _conv_nd(x: Tensor, w: Tensor, b, stride, pad, spatial: int, transposed: bool) -> Tensor:
    """Shared body for conv1d/conv2d/tconv2d. 1-d is lifted to 2-d with H=1."""
    batched = x.ndim == spatial + 2
    xd = x.data if batched else x.data[None]
    wd = w.data
    if spatial == 1:
        xd = xd[:, :, None, :]
        wd = wd[:, :, None, :]
        stride, pad = (1, stride), (0, pad)
    else:
        stride, pad = (stride, stride), (pad, pad)
    if min(stride) < 1 or min(pad) < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    fh, fw = wd.shape[2:]
    h, wdt = xd.shape[2:]
    if transposed:
        out_hw = ((h - 1) * stride[0] - 2 * pad[0] + fh, (wdt - 1) * stride[1] - 2 * pad[1] + fw)
        if min(out_hw) < 1:
            raise ShapeError(f"tconv: output size {out_hw} is empty")
        out = _conv_adjoint(xd, wd, stride, pad, out_hw)
        cout = wd.shape[1]
    else:
        if h + 2 * pad[0] < fh or wdt + 2 * pad[1] < fw:
            raise ShapeError(f"conv: padded input {(h + 2 * pad[0], wdt + 2 * pad[1])} smaller than kernel {(fh, fw)}")
        out, win = _conv_forward(xd, wd, stride, pad)
        cout = wd.shape[0]
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        g4 = g if batched else g[None]
        if spatial == 1:
            g4 = g4[:, :, None, :]
        if transposed:
            gx, gwin = _conv_forward(g4, wd, stride, pad)
            gw = np.tensordot(xd, gwin, axes=([0, 2, 3], [0, 2, 3]))
        else:
            gx = _conv_adjoint(g4, wd, stride, pad, (h, wdt))
            gw = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))
        gb = g4.sum(axis=(0, 2, 3)) if b is not None else None
        if spatial == 1:
            gx, gw = gx[:, :, 0, :], gw[:, :, 0, :]
        if not batched:
            gx = gx[0]
        return (gx, gw) if b is None else (gx, gw, gb)

    if spatial == 1:
        out = out[:, :, 0, :]
    if not batched:
        out = out[0]
    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, back)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation. x (C_in,H,W) or (B,C_in,H,W); w (C_out,C_in,f,f)."""
    _check_conv(x, w, b, 2, 1, 0, "conv2d")
    return _conv_nd(x, w, b, stride, pad, 2, transposed=False)


def tconv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed 2-D convolution, the adjoint of :func:`conv2d` with the same ``w``.

    w has layout (C_in, C_out, f, f); output side is (H-1)*stride - 2*pad + f.
    """
    _check_conv(x, w, b, 2, 0, 1, "tconv2d")
    return _conv_nd(x, w, b, stride, pad, 2, transposed=True)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """1-D cross-correlation. x (C_in,L) or (B,C_in,L); w (C_out,C_in,f)."""
    _check_conv(x, w, b, 1, 1, 0, "conv1d")
    return _conv_nd(x, w, b, stride, pad, 1, transposed=False)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    coords: Iterable[int] | None = None,
    terms: Callable[[Tensor], np.ndarray] | None = None,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``f`` maps ``x`` to a scalar tensor. ``coords`` restricts the comparison to
    a subset of flat indices of ``x`` (all coordinates by default). The
    relative error of one coordinate is
    ``|a - cd| / max(|a|, |cd|, 1e-12)``.

    ``terms``, if given, returns the additive contributions whose sum is
    ``f(x)``. The central difference is then taken term by term before
    summing, so it is not limited by the rounding of a large total.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x.grad = None
    x.requires_grad = True
    y = f(x)
    y.backward()
    analytic = np.zeros(x.shape, dtype=x.dtype) if x.grad is None else x.grad
    if not np.all(np.isfinite(analytic)):
        raise NumericError("analytic gradient is not finite")
    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            probe = f if terms is None else terms
            flat[i] = orig + eps
            fp = np.asarray(probe(x).data if terms is None else probe(x), dtype=np.float64)
            flat[i] = orig - eps
            fm = np.asarray(probe(x).data if terms is None else probe(x), dtype=np.float64)
            flat[i] = orig
            if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
                raise NumericError(f"non-finite function value at coordinate {i}")
            cd = float(np.sum(fp - fm)) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - cd) / max(abs(a), abs(cd), 1e-12)
            worst = max(worst, err)
    return worst

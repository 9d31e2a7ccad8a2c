"""Dense float32 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a backward closure on the output
tensor; calling ``backward()`` on a scalar loss replays those closures in
reverse topological order and accumulates gradients on the ``requires_grad``
leaves. The graph is consumed by the sweep (closures are dropped as they
run), so a second backward through the same graph is an error.

Conventions:
  * data is always float32, row-major; finite-difference oracles live in the
    test suite and run in float64
  * broadcasting follows numpy's trailing-dimension alignment
  * forward results are checked for NaN/Inf unless finite checks are disabled
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "is_grad_enabled",
    "set_finite_checks",
    "backward",
    "concat",
    "stack",
    "where",
    "minimum",
    "maximum",
    "matmul",
    "conv2d",
    "conv_transpose2d",
    "grid_sample",
    "avg_pool2d",
    "softmax",
    "layer_norm",
    "take",
    "identity_grid",
    "upsample_bilinear",
]

_GRAD_ENABLED = True
_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf screening of op outputs (on by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(name, data):
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise FloatingPointError(
            f"{name}: produced {bad} non-finite value(s) in output of shape {tuple(data.shape)}"
        )


class Tensor:
    """A float32 ndarray plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_done")

    # make numpy defer mixed numpy-scalar/Tensor arithmetic to our operators
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._done = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    # -- graph plumbing -------------------------------------------------------

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def backward(self) -> None:
        """Populate ``grad`` on every reachable requires_grad leaf.

        Only valid on scalar tensors. The recorded graph is consumed as the
        sweep runs; a repeated call raises.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {tuple(self.shape)}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if self._done:
            raise RuntimeError("backward() called twice: graph already consumed")

        # Iterative postorder walk; parents land before consumers, so the
        # reversed list replays adjoints in reverse execution order.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            fn = node._backward
            if fn is None:
                continue
            grads = fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
            # consume the graph as we go; frees activations early
            node._backward = None
            node._parents = ()
            node.grad = None
        self._done = True

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    # -- method forms ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def abs(self):
        return abs_(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def relu(self):
        return relu(self)

    def gelu(self):
        return gelu(self)

    def sigmoid(self):
        return sigmoid(self)

    def clamp(self, lo=None, hi=None):
        return clamp(self, lo, hi)

    def roll(self, shifts, axes):
        return roll(self, shifts, axes)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(name, data, parents, backward_fn):
    data = np.asarray(data, dtype=np.float32)
    _check_finite(name, data)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of trailing-dim broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _require_broadcast(name, *shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ValueError(f"{name}: shapes {[tuple(s) for s in shapes]} are not broadcast-compatible")


# -- elementwise binary ops ----------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require_broadcast("add", a.shape, b.shape)
    asb, bsb = a.data.shape, b.data.shape

    def backward(g):
        return (_unbroadcast(g, asb) if a.requires_grad else None,
                _unbroadcast(g, bsb) if b.requires_grad else None)

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require_broadcast("sub", a.shape, b.shape)
    asb, bsb = a.data.shape, b.data.shape

    def backward(g):
        return (_unbroadcast(g, asb) if a.requires_grad else None,
                _unbroadcast(-g, bsb) if b.requires_grad else None)

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require_broadcast("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make("mul", ad * bd, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require_broadcast("div", a.shape, b.shape)
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("div: denominator contains zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return _make("div", out, (a, b), backward)


def minimum(a, b):
    """Elementwise minimum; ties route the gradient to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    _require_broadcast("minimum", a.shape, b.shape)
    take_a = a.data <= b.data

    def backward(g):
        return (_unbroadcast(g * take_a, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * ~take_a, b.data.shape) if b.requires_grad else None)

    return _make("minimum", np.minimum(a.data, b.data), (a, b), backward)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require_broadcast("maximum", a.shape, b.shape)
    take_a = a.data >= b.data

    def backward(g):
        return (_unbroadcast(g * take_a, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * ~take_a, b.data.shape) if b.requires_grad else None)

    return _make("maximum", np.maximum(a.data, b.data), (a, b), backward)


def where(cond, a, b):
    """Select ``a`` where ``cond`` (a constant bool array) else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    _require_broadcast("where", cond.shape, a.shape, b.shape)

    def backward(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.data.shape) if a.requires_grad else None,
                _unbroadcast(np.where(cond, 0.0, g), b.data.shape) if b.requires_grad else None)

    return _make("where", np.where(cond, a.data, b.data), (a, b), backward)


# -- elementwise unary ops -------------------------------------------------------


def neg(a):
    a = as_tensor(a)

    def backward(g):
        return (-g,)

    return _make("neg", -a.data, (a,), backward)


def abs_(a):
    a = as_tensor(a)
    s = np.sign(a.data)

    def backward(g):
        return (g * s,)

    return _make("abs", np.abs(a.data), (a,), backward)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _make("exp", out, (a,), backward)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log: input contains values <= 0")
    ad = a.data

    def backward(g):
        return (g / ad,)

    return _make("log", np.log(ad), (a,), backward)


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt: input contains negative values")
    out = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out,)

    return _make("sqrt", out, (a,), backward)


def sin(a):
    a = as_tensor(a)
    ad = a.data

    def backward(g):
        return (g * np.cos(ad),)

    return _make("sin", np.sin(ad), (a,), backward)


def cos(a):
    a = as_tensor(a)
    ad = a.data

    def backward(g):
        return (g * -np.sin(ad),)

    return _make("cos", np.cos(ad), (a,), backward)


def pow(a, p):
    a = as_tensor(a)
    if isinstance(p, Tensor):
        raise TypeError("pow: only scalar exponents are supported")
    p = float(p)
    if p != int(p) and np.any(a.data < 0.0):
        raise ValueError(f"pow: negative base with non-integer exponent {p}")
    ad = a.data
    out = ad ** np.float32(p)

    def backward(g):
        return (g * p * ad ** np.float32(p - 1.0),)

    return _make("pow", out, (a,), backward)


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0

    def backward(g):
        return (g * pos,)

    return _make("relu", np.where(pos, a.data, 0.0), (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU via the tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + np.float32(0.044715) * x * x * x)
    t = np.tanh(inner)
    out = np.float32(0.5) * x * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * dinner).astype(np.float32),)

    return _make("gelu", out, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make("sigmoid", out, (a,), backward)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _make("tanh", out, (a,), backward)


def clamp(a, lo=None, hi=None):
    a = as_tensor(a)
    if lo is None and hi is None:
        raise ValueError("clamp: need at least one bound")
    inside = np.ones(a.data.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi

    def backward(g):
        return (g * inside,)

    return _make("clamp", np.clip(a.data, lo, hi), (a,), backward)


# -- reductions -----------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    axis = tuple(ax % ndim for ax in axis)
    for ax in axis:
        if ax >= ndim:
            raise ValueError(f"reduce: axis {ax} out of range for ndim {ndim}")
    return axis


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(np.float32, copy=True),)

    return _make("sum", out, (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    if axis is None:
        count = a.data.size
    else:
        count = 1
        for ax in axis:
            count *= shape[ax]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, shape) / np.float32(count)).astype(np.float32),)

    return _make("mean", out, (a,), backward)


# -- shape ops --------------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.data.shape
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(orig),)

    return _make("reshape", out, (a,), backward)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _make("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,), backward)


def _getitem(a, idx):
    """Basic slicing only; backward scatters into a zero tensor."""
    a = as_tensor(a)
    out = a.data[idx]
    shape = a.data.shape

    def backward(g):
        gx = np.zeros(shape, dtype=np.float32)
        gx[idx] = g
        return (gx,)

    return _make("getitem", np.ascontiguousarray(out), (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                grads.append(np.ascontiguousarray(g[tuple(sl)]))
            else:
                grads.append(None)
        return tuple(grads)

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(np.ascontiguousarray(parts[i]) if t.requires_grad else None
                     for i, t in enumerate(tensors))

    return _make("stack", np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def roll(a, shifts, axes):
    a = as_tensor(a)
    shifts = tuple(np.atleast_1d(shifts).tolist())
    axes = tuple(np.atleast_1d(axes).tolist())
    neg_shifts = tuple(-s for s in shifts)

    def backward(g):
        return (np.roll(g, neg_shifts, axes),)

    return _make("roll", np.roll(a.data, shifts, axes), (a,), backward)


# -- matmul -----------------------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul: operands must have at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ, {tuple(a.shape)} @ {tuple(b.shape)}")
    _require_broadcast("matmul(batch dims)", a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return (ga, gb)

    return _make("matmul", ad @ bd, (a, b), backward)


# -- convolution -------------------------------------------------------------------


def _im2col(xp, kh, kw, stride, ho, wo):
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _col2im(gcols, b, c, kh, kw, hp, wp, stride, ho, wo):
    gxp = np.zeros((b, c, hp, wp), dtype=np.float32)
    gc = gcols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += gc[:, :, i, j]
    return gxp


def conv2d(x, w, stride=1, padding=0):
    """Cross-correlation of NCHW input with OIHW weights."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d: expected 4D input and weight")
    b, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {ci}")
    s, p = int(stride), int(padding)
    if (h + 2 * p - kh) % s or (wd + 2 * p - kw) % s:
        raise ValueError(f"conv2d: non-integral output extent for input {h}x{wd}, "
                         f"kernel {kh}x{kw}, stride {s}, padding {p}")
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ValueError("conv2d: empty output")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, kh, kw, s, ho, wo)
    w2 = w.data.reshape(o, c * kh * kw)
    out = (w2 @ cols).reshape(b, o, ho, wo)

    def backward(g):
        g2 = g.reshape(b, o, ho * wo)
        gx = gw = None
        if w.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(o, c, kh, kw)
        if x.requires_grad:
            gcols = w2.T @ g2
            gxp = _col2im(gcols, b, c, kh, kw, h + 2 * p, wd + 2 * p, s, ho, wo)
            gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
            gx = np.ascontiguousarray(gx)
        return (gx, gw)

    return _make("conv2d", out, (x, w), backward)


def conv_transpose2d(x, w, stride=1, padding=0):
    """Adjoint of conv2d's linear map; weight layout (in_ch, out_ch, kh, kw).

    ``conv_transpose2d(g, w)`` equals the input-gradient of ``conv2d(x, w)``
    evaluated at upstream gradient ``g``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv_transpose2d: expected 4D input and weight")
    b, i, h, wd = x.shape
    wi, o, kh, kw = w.shape
    if wi != i:
        raise ValueError(f"conv_transpose2d: input has {i} channels, weight expects {wi}")
    s, p = int(stride), int(padding)
    if s < 1:
        raise ValueError("conv_transpose2d: stride must be >= 1")
    hf = (h - 1) * s + kh
    wf = (wd - 1) * s + kw
    ho, wo = hf - 2 * p, wf - 2 * p
    if ho < 1 or wo < 1:
        raise ValueError(f"conv_transpose2d: invalid geometry, output {ho}x{wo}")
    w2 = w.data.reshape(i, o * kh * kw)
    cols = (w2.T @ x.data.reshape(b, i, h * wd)).reshape(b, o, kh, kw, h, wd)
    outf = np.zeros((b, o, hf, wf), dtype=np.float32)
    for ki in range(kh):
        for kj in range(kw):
            outf[:, :, ki:ki + (h - 1) * s + 1:s, kj:kj + (wd - 1) * s + 1:s] += cols[:, :, ki, kj]
    out = outf[:, :, p:p + ho, p:p + wo] if p else outf

    def backward(g):
        gf = np.zeros((b, o, hf, wf), dtype=np.float32)
        gf[:, :, p:p + ho, p:p + wo] = g
        gcols = np.empty((b, o, kh, kw, h, wd), dtype=np.float32)
        for ki in range(kh):
            for kj in range(kw):
                gcols[:, :, ki, kj] = gf[:, :, ki:ki + (h - 1) * s + 1:s, kj:kj + (wd - 1) * s + 1:s]
        gcols = gcols.reshape(b, o * kh * kw, h * wd)
        gx = gw = None
        if x.requires_grad:
            gx = (w2 @ gcols).reshape(b, i, h, wd)
        if w.requires_grad:
            gw = np.tensordot(x.data.reshape(b, i, h * wd), gcols,
                              axes=([0, 2], [0, 2])).reshape(i, o, kh, kw)
        return (gx, gw)

    return _make("conv_transpose2d", np.ascontiguousarray(out), (x, w), backward)


# -- sampling ------------------------------------------------------------------------

_SNAP_EPS = 1e-4  # px; keeps identity grids exactly self-sampling


def grid_sample(x, grid):
    """Bilinear sampling of NCHW input at normalized grid locations.

    grid[..., 0] is x in [-1, 1], grid[..., 1] is y; pixel center i sits at
    (2i + 1)/N - 1. Out-of-range locations clamp to the border. Differentiable
    w.r.t. both input and grid (grid gradient is zero where clamped).
    """
    x, grid = as_tensor(x), as_tensor(grid)
    if grid.shape[-1] != 2:
        raise ValueError(f"grid_sample: grid last dim must be 2, got {grid.shape[-1]}")
    if x.ndim != 4 or grid.ndim != 4 or grid.shape[0] != x.shape[0]:
        raise ValueError("grid_sample: expected x (B,C,H,W) and grid (B,Hg,Wg,2)")
    b, c, h, w = x.shape
    hg, wg = grid.shape[1], grid.shape[2]
    n = hg * wg

    # float32 unnormalization keeps coordinates within ~1e-5 px, well inside
    # the snap tolerance that guarantees exact identity-grid sampling
    uv = grid.data.reshape(b, n, 2) + np.float32(1.0)
    uv *= np.array([w, h], dtype=np.float32) / 2
    uv -= np.float32(0.5)
    uvr = np.rint(uv)
    np.copyto(uv, uvr, where=np.abs(uv - uvr) < _SNAP_EPS)
    bounds = np.array([w - 1.0, h - 1.0], dtype=np.float32)
    in_rng = (uv > 0.0) & (uv < bounds)  # clamped coords have zero grid-gradient
    np.clip(uv, 0.0, bounds, out=uv)

    uv0 = np.floor(uv)
    frac = (uv - uv0).astype(np.float32)
    uv0 = uv0.astype(np.int64)
    u0, v0 = uv0[:, :, 0], uv0[:, :, 1]
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)

    # gather all four corners in one advanced-indexing pass on (B, HW, C)
    xt = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(b, h * w, c)
    idx4 = np.stack([v0 * w + u0, v0 * w + u1, v1 * w + u0, v1 * w + u1], axis=1)
    corners = xt[np.arange(b)[:, None, None], idx4]       # (B, 4, N, C)
    p00, p10, p01, p11 = corners[:, 0], corners[:, 1], corners[:, 2], corners[:, 3]
    wu = frac[:, :, 0:1]
    wv = frac[:, :, 1:2]
    out_nc = ((1 - wu) * (1 - wv) * p00 + wu * (1 - wv) * p10 +
              (1 - wu) * wv * p01 + wu * wv * p11)         # (B, N, C)
    out = out_nc.reshape(b, hg, wg, c).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.reshape(b, c, n).transpose(0, 2, 1)         # (B, N, C)
        gx = ggrid = None
        if x.requires_grad:
            boff = (np.arange(b, dtype=np.int64) * h * w)[:, None, None]
            total = b * h * w
            acc = np.zeros((total, c), dtype=np.float64)
            w4 = np.stack([(1 - wu) * (1 - wv), wu * (1 - wv),
                           (1 - wu) * wv, wu * wv], axis=1)  # (B, 4, N, 1)
            full = (boff + idx4).reshape(-1)
            vals = (w4 * g2[:, None]).reshape(-1, c)
            for ch in range(c):
                acc[:, ch] = np.bincount(full, weights=vals[:, ch], minlength=total)
            gx = acc.reshape(b, h, w, c).transpose(0, 3, 1, 2).astype(np.float32)
        if grid.requires_grad:
            dou = (1 - wv) * (p10 - p00) + wv * (p11 - p01)
            dov = (1 - wu) * (p01 - p00) + wu * (p11 - p10)
            du = (g2 * dou).sum(axis=2) * in_rng[:, :, 0] * (w / 2.0)
            dv = (g2 * dov).sum(axis=2) * in_rng[:, :, 1] * (h / 2.0)
            ggrid = np.stack([du, dv], axis=-1).reshape(b, hg, wg, 2).astype(np.float32)
        return (gx, ggrid)

    return _make("grid_sample", np.ascontiguousarray(out), (x, grid), backward)


def identity_grid(h, w):
    """Constant grid whose sample points are the pixel centers of an (h, w) map.

    The same grid bilinearly resizes any input to (h, w), since normalized
    coordinates are resolution-independent.
    """
    gy, gx = np.meshgrid((2 * np.arange(h) + 1) / h - 1.0,
                         (2 * np.arange(w) + 1) / w - 1.0, indexing="ij")
    return np.stack([gx, gy], axis=-1).astype(np.float32)


_RESIZE_PLANS = {}


def _resize_plan(h, w, oh, ow):
    """Precomputed corner indices and weights for a fixed bilinear resize."""
    key = (h, w, oh, ow)
    plan = _RESIZE_PLANS.get(key)
    if plan is None:
        u = np.clip(((np.arange(ow) + 0.5) * (w / ow)) - 0.5, 0, w - 1)
        v = np.clip(((np.arange(oh) + 0.5) * (h / oh)) - 0.5, 0, h - 1)
        u0 = np.floor(u).astype(np.int64)
        v0 = np.floor(v).astype(np.int64)
        fu = (u - u0).astype(np.float32)
        fv = (v - v0).astype(np.float32)
        u1 = np.minimum(u0 + 1, w - 1)
        v1 = np.minimum(v0 + 1, h - 1)
        vv0, uu0 = np.meshgrid(v0, u0, indexing="ij")
        vv1, uu1 = np.meshgrid(v1, u1, indexing="ij")
        idx4 = np.stack([(vv0 * w + uu0).ravel(), (vv0 * w + uu1).ravel(),
                         (vv1 * w + uu0).ravel(), (vv1 * w + uu1).ravel()])
        wv, wu = np.meshgrid(fv, fu, indexing="ij")
        wu = wu.ravel()
        wv = wv.ravel()
        w4 = np.stack([(1 - wu) * (1 - wv), wu * (1 - wv), (1 - wu) * wv, wu * wv])
        plan = (idx4, w4.astype(np.float32))
        _RESIZE_PLANS[key] = plan
    return plan


def upsample_bilinear(x, out_h, out_w):
    """Bilinear resize to (out_h, out_w); differentiable w.r.t. the input.

    Sample points follow the same pixel-center convention as grid_sample
    (this op equals grid_sample with an identity grid of the output size).
    """
    x = as_tensor(x)
    b, c, h, w = x.shape
    idx4, w4 = _resize_plan(h, w, out_h, out_w)
    flat = x.data.reshape(b, c, h * w)
    corners = flat[:, :, idx4]                      # (B, C, 4, N)
    out = (corners * w4[None, None]).sum(axis=2)

    def backward(g):
        g2 = g.reshape(b * c, out_h * out_w)
        total = b * c * h * w
        rows = (np.arange(b * c, dtype=np.int64) * (h * w))[:, None]
        acc = np.zeros(total, dtype=np.float64)
        for corner in range(4):
            full = (rows + idx4[corner]).ravel()
            acc += np.bincount(full, weights=(g2 * w4[corner]).ravel(), minlength=total)
        return (acc.reshape(b, c, h, w).astype(np.float32),)

    return _make("upsample_bilinear", out.reshape(b, c, out_h, out_w), (x,), backward)


# -- normalization suite ------------------------------------------------------------


def _collapse_pad_axis(arr, p, axis):
    """Adjoint of replicate padding along one axis: fold pad strips onto edges."""
    n = arr.shape[axis] - 2 * p
    arr = np.moveaxis(arr, axis, -1)
    out_shape = arr.shape[:-1] + (n,)
    out = np.empty(out_shape, dtype=np.float32)
    if n == 1:
        out[..., 0] = arr.sum(axis=-1)
    else:
        out[..., 0] = arr[..., :p + 1].sum(axis=-1)
        out[..., -1] = arr[..., -(p + 1):].sum(axis=-1)
        if n > 2:
            out[..., 1:-1] = arr[..., p + 1:-(p + 1)]
    return np.moveaxis(out, -1, axis)


def avg_pool2d(x, kernel=3):
    """Box mean with stride 1 and replicate padding; output size equals input."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError("avg_pool2d: expected NCHW input")
    k = int(kernel)
    if k % 2 != 1 or k < 1:
        raise ValueError("avg_pool2d: kernel must be odd")
    p = k // 2
    b, c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode="edge")
    out = np.zeros((b, c, h, w), dtype=np.float32)
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i:i + h, j:j + w]
    inv = np.float32(1.0 / (k * k))
    out *= inv

    def backward(g):
        gp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=np.float32)
        gk = g * inv
        for i in range(k):
            for j in range(k):
                gp[:, :, i:i + h, j:j + w] += gk
        gx = _collapse_pad_axis(_collapse_pad_axis(gp, p, 2), p, 3)
        return (np.ascontiguousarray(gx),)

    return _make("avg_pool2d", out, (x,), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make("softmax", out, (x,), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    f = x.shape[-1]
    if gamma.shape != (f,) or beta.shape != (f,):
        raise ValueError(f"layer_norm: affine params must have shape ({f},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = (g * xhat).reshape(-1, f).sum(axis=0)
        if beta.requires_grad:
            gbeta = g.reshape(-1, f).sum(axis=0)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            gx = gx.astype(np.float32)
        return (gx, ggamma, gbeta)

    return _make("layer_norm", out, (x, gamma, beta), backward)


def take(table, indices):
    """Row lookup ``table[indices]`` with scatter-add backward (axis 0)."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    shape = table.data.shape

    def backward(g):
        gt = np.zeros(shape, dtype=np.float32)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make("take", table.data[idx], (table,), backward)


def backward(loss: Tensor) -> None:
    """Function form of ``loss.backward()``."""
    loss.backward()

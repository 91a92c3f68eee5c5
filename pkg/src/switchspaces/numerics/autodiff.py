"""Reverse-mode differentiation over dense float64 arrays.

Every primitive accepts plain arrays as well as :class:`Tensor` nodes. When
no argument is a ``Tensor`` the primitive returns a plain ``ndarray`` and no
graph is recorded, so the same model code serves both the training path and
the (cheaper) inference path.
"""

from __future__ import annotations

import contextlib
import os
from collections.abc import Mapping

import numpy as np

from ..errors import ContractViolation, NumericFailure

_CHECK_FINITE = os.environ.get("SWITCHSPACES_DEBUG", "") not in ("", "0")


def set_check_numerics(enabled: bool) -> None:
    """Turn NaN/Inf detection on every primitive on or off."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def check_numerics_enabled() -> bool:
    return _CHECK_FINITE


@contextlib.contextmanager
def check_numerics(enabled: bool = True):
    prev = _CHECK_FINITE
    set_check_numerics(enabled)
    try:
        yield
    finally:
        set_check_numerics(prev)


class Tensor:
    """A node of the computation graph.

    ``parents`` holds the input nodes and ``vjp`` maps the output cotangent to
    one cotangent per parent (``None`` for parents that need no gradient).
    """

    __slots__ = ("value", "parents", "vjp", "requires_grad", "op", "name")
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, requires_grad=False, op="leaf", name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.op = op
        self.name = name

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(op={self.op}{label}, shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def param(value, name=None) -> Tensor:
    """A trainable leaf."""
    return Tensor(value, requires_grad=True, name=name)


def value(x):
    """The numeric payload of ``x`` (a Tensor or anything array-like)."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _is_t(x):
    return isinstance(x, Tensor)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(out, op, parents, vjp, allow_neginf=False):
    if _CHECK_FINITE:
        bad = np.isnan(out) | (np.isposinf(out) if allow_neginf else np.isinf(out))
        if np.any(bad):
            raise NumericFailure(op)
    live = any(_is_t(p) and p.requires_grad for p in parents)
    if not live:
        return Tensor(out, op=op)
    return Tensor(out, parents=parents, vjp=vjp, requires_grad=True, op=op)


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    if not (_is_t(a) or _is_t(b)):
        return np.add(a, b)
    av, bv = value(a), value(b)
    return _node(av + bv, "add", (a, b), lambda g: (g, g))


def sub(a, b):
    if not (_is_t(a) or _is_t(b)):
        return np.subtract(a, b)
    av, bv = value(a), value(b)
    return _node(av - bv, "sub", (a, b), lambda g: (g, -g))


def mul(a, b):
    if not (_is_t(a) or _is_t(b)):
        return np.multiply(a, b)
    av, bv = value(a), value(b)
    return _node(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    if not (_is_t(a) or _is_t(b)):
        return np.divide(a, b)
    av, bv = value(a), value(b)
    out = av / bv
    return _node(out, "div", (a, b), lambda g: (g / bv, -g * out / bv))


def neg(a):
    if not _is_t(a):
        return np.negative(a)
    return _node(-a.value, "neg", (a,), lambda g: (-g,))


def _unary(name, f, dfdx):
    def op(x):
        if not _is_t(x):
            return f(np.asarray(x, dtype=np.float64))
        xv = x.value
        with np.errstate(all="ignore"):
            out = f(xv)
        return _node(out, name, (x,), lambda g: (g * dfdx(xv, out),))

    op.__name__ = name
    return op


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


exp = _unary("exp", np.exp, lambda x, y: y)
log = _unary("log", np.log, lambda x, y: 1.0 / x)
sqrt = _unary("sqrt", np.sqrt, lambda x, y: 0.5 / y)
sin = _unary("sin", np.sin, lambda x, y: np.cos(x))
cos = _unary("cos", np.cos, lambda x, y: -np.sin(x))
tan = _unary("tan", np.tan, lambda x, y: 1.0 + y * y)
tanh = _unary("tanh", np.tanh, lambda x, y: 1.0 - y * y)
arctan = _unary("arctan", np.arctan, lambda x, y: 1.0 / (1.0 + x * x))
artanh = _unary("artanh", np.arctanh, lambda x, y: 1.0 / (1.0 - x * x))
softplus = _unary("softplus", _softplus, lambda x, y: _sigmoid(x))
relu = _unary("relu", lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))


def square(x):
    return mul(x, x)


def maximum(a, b):
    """Elementwise max; ties send the gradient to ``a``."""
    if not (_is_t(a) or _is_t(b)):
        return np.maximum(a, b)
    av, bv = value(a), value(b)
    pick = (av >= bv).astype(np.float64)
    return _node(np.maximum(av, bv), "max", (a, b), lambda g: (g * pick, g * (1.0 - pick)))


def where(cond, a, b):
    """Select from ``a`` where ``cond`` holds, else ``b``; ``cond`` is a constant."""
    cond = np.asarray(cond, dtype=bool)
    if not (_is_t(a) or _is_t(b)):
        return np.where(cond, a, b)
    av, bv = value(a), value(b)
    # masking with -inf (ahead of a softmax) is intended, so only NaN/+inf count as failures
    return _node(np.where(cond, av, bv), "where", (a, b), lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)), allow_neginf=True)


def stop_gradient(x):
    return value(x) if _is_t(x) else x


# ----------------------------------------------------------------------------
# reductions


def sum_(x, axis=None, keepdims=False):
    if not _is_t(x):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.value.shape
    out = np.sum(x.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(out, "sum", (x,), vjp)


def mean(x, axis=None, keepdims=False):
    n = value(x).size if axis is None else np.prod([value(x).shape[a] for a in np.atleast_1d(axis)])
    return div(sum_(x, axis=axis, keepdims=keepdims), float(n))


def amax(x, axis=-1, keepdims=False):
    """Max reduction; the gradient goes to the first maximiser."""
    if not _is_t(x):
        return np.max(x, axis=axis, keepdims=keepdims)
    xv = x.value
    idx = np.expand_dims(np.argmax(xv, axis=axis), axis)
    out = np.take_along_axis(xv, idx, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(xv)
        np.put_along_axis(full, idx, g, axis=axis)
        return (full,)

    return _node(out if keepdims else np.squeeze(out, axis), "max", (x,), vjp)


def inner(a, b, axis=-1, keepdims=True):
    """Euclidean inner product along ``axis``."""
    if not (_is_t(a) or _is_t(b)):
        return np.sum(np.multiply(a, b), axis=axis, keepdims=keepdims)
    av, bv = value(a), value(b)
    out = np.sum(av * bv, axis=axis, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return g * bv, g * av

    return _node(out, "inner", (a, b), vjp)


def norm(x, axis=-1, keepdims=True):
    """Euclidean norm; the gradient at the zero vector is taken as zero."""
    if not _is_t(x):
        return np.sqrt(np.sum(np.square(x), axis=axis, keepdims=keepdims))
    xv = x.value
    n = np.sqrt(np.sum(xv * xv, axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.where(n > 0, xv / safe, 0.0),)

    return _node(n if keepdims else np.squeeze(n, axis), "norm", (x,), vjp)


def softmax(x, axis=-1):
    """Softmax; ``-inf`` entries produce exact zeros."""
    xv = value(x)
    m = np.max(xv, axis=axis, keepdims=True)
    e = np.exp(xv - m)
    y = e / np.sum(e, axis=axis, keepdims=True)
    if not _is_t(x):
        return y

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _node(y, "softmax", (x,), vjp)


# ----------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b):
    if not (_is_t(a) or _is_t(b)):
        return np.matmul(a, b)
    av, bv = value(a), value(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ContractViolation("matmul operands must be at least 2-D")
    out = av @ bv

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _node(out, "matmul", (a, b), vjp)


def reshape(x, shape):
    if not _is_t(x):
        return np.reshape(x, shape)
    old = x.value.shape
    return _node(x.value.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a1, a2):
    if not _is_t(x):
        return np.swapaxes(x, a1, a2)
    return _node(np.swapaxes(x.value, a1, a2), "swapaxes", (x,), lambda g: (np.swapaxes(g, a1, a2),))


def concat(xs, axis=-1):
    if not any(_is_t(x) for x in xs):
        return np.concatenate([np.asarray(x, dtype=np.float64) for x in xs], axis=axis)
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, "concat", tuple(xs), vjp)


def getitem(x, index):
    """Slicing (basic or fancy); repeated fancy indices accumulate."""
    if not _is_t(x):
        return np.asarray(x)[index]
    xv = x.value

    def vjp(g):
        full = np.zeros_like(xv)
        np.add.at(full, index, g)
        return (full,)

    return _node(xv[index], "slice", (x,), vjp)


def take(x, indices, axis=0, cols=None):
    """Gather along ``axis`` (embedding lookup); backward scatters with accumulation.

    ``cols`` (a slice, 2-D ``x`` and ``axis=0`` only) restricts the lookup to
    those columns, so untouched columns are never copied.
    """
    indices = np.asarray(indices)
    if cols is not None:
        if axis != 0 or value(x).ndim != 2:
            raise ContractViolation("take with cols needs a 2-D table and axis=0")
        if not _is_t(x):
            return x[indices, cols]
        xv = x.value

        def vjp_cols(g):
            full = np.zeros_like(xv)
            np.add.at(full[:, cols], indices, g)
            return (full,)

        return _node(xv[indices, cols], "slice", (x,), vjp_cols)
    if not _is_t(x):
        return np.take(x, indices, axis=axis)
    xv = x.value
    out = np.take(xv, indices, axis=axis)
    ax = axis % xv.ndim

    def vjp(g):
        full = np.zeros_like(xv)
        moved = np.moveaxis(full, ax, 0)
        gm = np.moveaxis(g, tuple(range(ax, ax + indices.ndim)), tuple(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (full,)

    return _node(out, "slice", (x,), vjp)


def scatter_rows(x, rows, n):
    """Place the rows of ``x`` at positions ``rows`` of an ``n``-row zero array."""
    rows = np.asarray(rows)
    xv = value(x)
    out = np.zeros((n,) + xv.shape[1:])
    out[rows] = xv
    if not _is_t(x):
        return out
    return _node(out, "scatter", (x,), lambda g: (g[rows],))


# ----------------------------------------------------------------------------
# backward pass


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if _is_t(p) and p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, wrt=None):
    """Gradients of the scalar ``root``.

    ``wrt`` is a mapping ``name -> Tensor`` (result: a dict with the same
    keys) or a sequence of Tensors (result: a list in the same order).
    Leaves not reachable from ``root`` get zero arrays.
    """
    if not _is_t(root) or root.value.size != 1:
        raise ContractViolation("backward needs a scalar Tensor root")
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(_toposort(root)):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            if gp is None or not (_is_t(p) and p.requires_grad):
                continue
            gp = _unbroadcast(np.asarray(gp, dtype=np.float64), p.value.shape)
            if _CHECK_FINITE and not np.all(np.isfinite(gp)):
                raise NumericFailure(node.op, "non-finite gradient")
            prev = grads.get(id(p))
            grads[id(p)] = gp if prev is None else prev + gp
    if wrt is None:
        return grads
    def grad_of(t):
        return grads.get(id(t), np.zeros_like(t.value)) if _is_t(t) else np.zeros_like(value(t))

    if isinstance(wrt, Mapping):
        return {k: grad_of(t) for k, t in wrt.items()}
    return [grad_of(t) for t in wrt]

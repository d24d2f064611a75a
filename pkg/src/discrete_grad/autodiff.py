"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Every operation returns a new :class:`Tensor`. When at least one operand has
``requires_grad`` set, the result remembers its parents and a backward rule
mapping the output gradient to one gradient per parent. :func:`backward`
walks the recorded graph in reverse topological order.

Broadcasting is deliberately narrow: two operands must have equal shapes, or
one must be a scalar, or one shape must be a trailing suffix of the other
(e.g. a ``[n]`` bias added to a ``[batch, n]`` activation).

:func:`straight_through` is the one non-standard node: its forward value is an
arbitrary constant array while its gradient is routed unchanged into a
surrogate node. All straight-through estimators are built from it.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GraphError, NumericError, ShapeError

DTYPE = np.float64

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An n-dimensional float64 array with an optional gradient accumulator.

    A Tensor doubles as a graph node: ``parents`` and ``backward_rule`` are
    populated when the tensor was produced by an op on differentiable inputs.
    """

    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_rule", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor", "constructor received NaN/Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.parents: tuple = ()
        self.backward_rule: Optional[BackwardRule] = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data, parents, rule, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if not np.all(np.isfinite(data)):
            raise NumericError(op)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = tuple(parents)
            out.backward_rule = rule
        else:
            out.requires_grad = False
            out.parents = ()
            out.backward_rule = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("division is only defined by a scalar")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def exp(self):
        return exp(self)

    def log(self, floor=None):
        return log(self, floor=floor)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def softmax(self):
        return softmax(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_broadcast(op, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim > b.ndim and sa[a.ndim - b.ndim:] == sb:
        return
    if b.ndim > a.ndim and sb[b.ndim - a.ndim:] == sa:
        return
    raise ShapeError(op, sa, sb, detail="only leading-axis broadcasting is supported")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)))


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def rule(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), rule, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a, floor: Optional[float] = None) -> Tensor:
    """Natural log. With ``floor`` the input is clamped from below first and
    clamped entries receive zero gradient."""
    a = as_tensor(a)
    x = a.data
    if floor is not None:
        clamped = x < floor
        x = np.where(clamped, floor, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)

    def rule(g):
        ga = g / x
        if floor is not None:
            ga = np.where(clamped, 0.0, ga)
        return (ga,)

    return Tensor._from_op(out, (a,), rule, "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(-np.logaddexp(0.0, -a.data))
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ------------------------------------------------------------------ reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), rule, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ShapeError("mean", a.shape, detail="empty reduction")
    return scale(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def max(a, axis: int = -1):  # noqa: A001 - mirrors numpy
    """Max along ``axis``; returns ``(values, indices)``. Ties go to the lowest index."""
    a = as_tensor(a)
    ax = axis % a.ndim
    idx = np.argmax(a.data, axis=ax)
    out = np.take_along_axis(a.data, np.expand_dims(idx, ax), axis=ax).squeeze(ax)

    def rule(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, ax), np.expand_dims(g, ax), axis=ax)
        return (ga,)

    return Tensor._from_op(out, (a,), rule, "max"), idx


# ------------------------------------------------------------ softmax family


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a) -> Tensor:
    """Softmax over the last axis (max-shifted)."""
    a = as_tensor(a)
    if a.ndim == 0:
        raise ShapeError("softmax", a.shape, detail="needs at least one axis")
    s = _softmax(a.data)

    def rule(g):
        # J^T g for J = diag(s) - s s^T, row by row
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(s, (a,), rule, "softmax")


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    s = np.exp(out)

    def rule(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return Tensor._from_op(out, (a,), rule, "log_softmax")


# -------------------------------------------------------------------- linalg


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def rule(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), rule, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape, detail="expects a matrix")
    return Tensor._from_op(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


# ------------------------------------------------------------------ reshaping


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concatenate(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concatenate", (), detail="no inputs")
    ndim = ts[0].ndim
    ax = axis % ndim
    for t in ts[1:]:
        other = [s for i, s in enumerate(t.shape) if i != ax]
        first = [s for i, s in enumerate(ts[0].shape) if i != ax]
        if t.ndim != ndim or other != first:
            raise ShapeError("concatenate", ts[0].shape, t.shape)
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor._from_op(np.concatenate([t.data for t in ts], axis=ax), ts, rule, "concatenate")


# ---------------------------------------------------------- straight-through


def straight_through(forward_value, surrogate: Tensor) -> Tensor:
    """Emit ``forward_value`` forward; send the incoming gradient to ``surrogate``.

    This is the ``dz/dsurrogate := identity`` node behind every straight-through
    estimator.
    """
    fv = forward_value.data if isinstance(forward_value, Tensor) else np.asarray(forward_value, dtype=DTYPE)
    if fv.shape != surrogate.shape:
        raise ShapeError("straight_through", fv.shape, surrogate.shape)
    return Tensor._from_op(fv.astype(DTYPE, copy=True), (surrogate,), lambda g: (g,), "straight_through")


# ------------------------------------------------------------------- backward


def _topological_order(root: Tensor):
    order = []
    state = {}  # id -> 1 (on current DFS path) or 2 (finished)
    stack = [(root, False)]
    while stack:
        node, leaving = stack.pop()
        key = id(node)
        if leaving:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise GraphError(f"cycle detected at node {node!r}")
        state[key] = 1
        stack.append((node, True))
        for parent in node.parents:
            pmark = state.get(id(parent))
            if pmark == 1:
                raise GraphError(f"cycle detected at node {parent!r}")
            if pmark is None:
                stack.append((parent, False))
    return order


def backward(root: Tensor):
    """Accumulate d(root)/d(node) into ``.grad`` of every differentiable node."""
    if root.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise GraphError("root does not depend on any tensor with requires_grad")
    order = _topological_order(root)
    pending = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node.backward_rule is None:
            continue
        for parent, pg in zip(node.parents, node.backward_rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=DTYPE)
            if not np.all(np.isfinite(pg)):
                raise NumericError(node.op, "non-finite gradient in backward pass")
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grad(tensors):
    for t in tensors:
        t.grad = None

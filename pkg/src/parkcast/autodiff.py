"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every forward pass records the ops it executes; ``backward`` walks that record
in reverse topological order.  Values are numpy arrays, gradients accumulate
into ``Tensor.grad`` of every tensor with ``requires_grad``.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Param", "ShapeError", "DivergenceError",
    "as_tensor", "matmul", "vertex_matmul", "concat", "stack", "relu",
    "sigmoid", "tanh", "identity", "activation", "ACTIVATIONS",
    "backward", "tape_forward_backward",
]


class ShapeError(ValueError):
    """Raised before any arithmetic when two operands cannot be combined."""

    def __init__(self, op, a, b, detail=""):
        self.op = op
        self.shapes = (tuple(a), tuple(b))
        msg = f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DivergenceError(FloatingPointError):
    """A loss, gradient or prediction became non-finite."""


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

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

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def _acc(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def _grad_slot(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # -- elementwise arithmetic ---------------------------------------------
    def _binary(self, other, op):
        other = as_tensor(other)
        try:
            out_shape = np.broadcast_shapes(self.shape, other.shape)
        except ValueError:
            raise ShapeError(op, self.shape, other.shape, "not broadcastable") from None
        a, b = self, other
        if op == "add":
            data = a.data + b.data
        elif op == "sub":
            data = a.data - b.data
        else:
            data = a.data * b.data

        def _back(g):
            if a.requires_grad:
                ga = g if op != "mul" else g * b.data
                a._acc(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                if op == "add":
                    gb = g
                elif op == "sub":
                    gb = -g
                else:
                    gb = g * a.data
                b._acc(_unbroadcast(gb, b.shape))

        assert data.shape == out_shape
        return _node(data, (a, b), _back)

    def __add__(self, other):
        return self._binary(other, "add")

    def __radd__(self, other):
        return as_tensor(other)._binary(self, "add")

    def __sub__(self, other):
        return self._binary(other, "sub")

    def __rsub__(self, other):
        return as_tensor(other)._binary(self, "sub")

    def __mul__(self, other):
        return self._binary(other, "mul")

    def __rmul__(self, other):
        return as_tensor(other)._binary(self, "mul")

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        if p != 2:
            raise NotImplementedError("only squares are supported")
        a = self

        def _back(g):
            a._acc(2.0 * a.data * g)

        return _node(a.data * a.data, (a,), _back)

    # -- reductions and views -------------------------------------------------
    def sum(self, axis=None):
        a = self
        data = a.data.sum(axis=axis)

        def _back(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            a._acc(np.broadcast_to(g, a.shape))

        return _node(data, (a,), _back)

    def mean(self):
        return self.sum() * (1.0 / self.size)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        try:
            data = a.data.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", a.shape, shape) from None

        def _back(g):
            a._acc(g.reshape(a.shape))

        return _node(data, (a,), _back)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        if sorted(axes) != list(range(a.ndim)):
            raise ShapeError("transpose", a.shape, axes, "bad axis permutation")
        inv = np.argsort(axes)

        def _back(g):
            a._acc(np.transpose(g, inv))

        return _node(np.transpose(a.data, axes), (a,), _back)

    def __getitem__(self, idx):
        a = self
        data = a.data[idx]

        def _back(g):
            slot = a._grad_slot()
            slot[idx] += g

        return _node(np.array(data, copy=True), (a,), _back)


class Param(Tensor):
    """A trainable tensor.  ``grad`` always exists and has the value's shape."""

    __slots__ = ()

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True, name=name)
        self.data = np.ascontiguousarray(self.data)
        self.grad = np.zeros_like(self.data)

    @property
    def value(self):
        return self.data

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, back):
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=back)
    return Tensor(data)


def matmul(a, b):
    """``a @ b`` for ``a`` of shape (..., k) and a 2-D ``b`` of shape (k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    # one 2-D GEMM over the flattened leading axes; N-D @ loops per slice
    lead = a.shape[:-1]
    a2 = np.ascontiguousarray(a.data).reshape(-1, a.shape[-1])
    data = (a2 @ b.data).reshape(lead + (b.shape[1],))

    def _back(g):
        g2 = np.ascontiguousarray(g).reshape(-1, b.shape[1])
        if a.requires_grad:
            a._acc((g2 @ b.data.T).reshape(a.shape))
        if b.requires_grad:
            b._acc(a2.T @ g2)

    return _node(data, (a, b), _back)


def vertex_matmul(op, x):
    """Apply a constant (V, V) operator along axis -2 of ``x`` (..., V, D)."""
    x = as_tensor(x)
    op = np.asarray(op, dtype=np.float64)
    if op.ndim != 2 or x.ndim < 2 or op.shape[1] != x.shape[-2]:
        raise ShapeError("vertex_matmul", op.shape, x.shape)
    data = np.matmul(op, x.data)

    def _back(g):
        x._acc(np.matmul(op.T, g))

    return _node(data, (x,), _back)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", ref, t.shape, f"axis={axis}")
    data = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def _back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                t._acc(g[tuple(sl)])

    return _node(data, tuple(tensors), _back)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError("stack", ref, t.shape)
    data = np.stack([t.data for t in tensors], axis=axis)

    def _back(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._acc(np.take(g, i, axis=axis))

    return _node(data, tuple(tensors), _back)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def _back(g):
        x._acc(g * mask)

    return _node(x.data * mask, (x,), _back)


def _sigmoid(z):
    # split on sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)

    def _back(g):
        x._acc(g * s * (1.0 - s))

    return _node(s, (x,), _back)


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)

    def _back(g):
        x._acc(g * (1.0 - t * t))

    return _node(t, (x,), _back)


def identity(x):
    return as_tensor(x)


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "identity": identity}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def _topo_order(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable tensor's ``grad``."""
    if loss.size != 1:
        raise ShapeError("backward", loss.shape, (), "loss must be a scalar")
    if not np.isfinite(loss.data).all():
        raise DivergenceError(f"non-finite loss {np.asarray(loss.data).ravel()[:1]}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    # intermediate grads are scratch: reset them, leaves keep accumulating
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node.grad = None


def tape_forward_backward(forward, params):
    """Zero ``params`` grads, run ``forward()`` to a scalar loss and backpropagate.

    Returns the loss as a float; ``p.grad`` then holds d(loss)/dp.
    """
    for p in params:
        p.zero_grad()
    loss = forward()
    backward(loss)
    return float(loss.data)

"""Minimal reverse-mode autodiff over float64 numpy arrays.

Each operation below eagerly computes its result and records a closure
that knows how to push the output gradient back to its inputs. Calling
``backward()`` on a scalar walks the recorded graph once in reverse
topological order. Gradients accumulate across repeated ``backward()``
calls until cleared with :func:`zero_grads`.

All arithmetic is float64; this leaves enough headroom for the
finite-difference checks in the test suite (central differences at step
1e-5). The op set is deliberately small: vectors, matrices, a few
activations, dropout, and MSE, which is everything the fusion models
need. Broadcasting is supported wherever numpy supports it; gradients
of broadcast operands are sum-reduced back to the operand shape.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError, StateError

__all__ = [
    "Tensor",
    "concat",
    "dropout",
    "mse_loss",
    "relu",
    "sigmoid",
    "softmax_rows",
    "zero_grads",
]

# Largest float64 strictly below 1 and smallest strictly above 0: sigmoid
# outputs are clamped into this open interval so saturation can never
# round to an exact 0 or 1.
_ONE_MINUS = 1.0 - 2.0 ** -53
_ZERO_PLUS = np.nextafter(0.0, 1.0)


class Tensor:
    """A float64 numpy array plus an accumulated gradient.

    Leaves created with ``requires_grad=True`` (parameters) start with a
    zero gradient of matching shape. Gradients of intermediate nodes are
    allocated lazily during backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_prev", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._prev = ()
        self._backward = None
        self._op = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, op={self._op!r}{tag})"

    # -- gradient bookkeeping -------------------------------------------

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad = None

    def backward(self):
        """Propagate gradients from this scalar through the recorded graph.

        Repeated calls accumulate into ``grad``; use :func:`zero_grads`
        between optimization steps.
        """
        if self._op is None:
            raise StateError(
                "backward() called on a tensor with no recorded forward graph"
            )
        if self.data.size != 1:
            raise ShapeError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        # Leaf gradients accumulate across backward calls; interior node
        # gradients are scratch space and reset per pass.
        for node in topo:
            if node._op is not None:
                node.grad = None
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        a, b = self, _ensure(other)
        out = _node(a.data + b.data, (a, b), "+")

        def backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(g, b.data.shape))

        return _finish(out, backward)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        a, b = self, _ensure(other)
        out = _node(a.data - b.data, (a, b), "-")

        def backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(-g, b.data.shape))

        return _finish(out, backward)

    def __rsub__(self, other):
        return _ensure(other) - self

    def __mul__(self, other):
        a, b = self, _ensure(other)
        out = _node(a.data * b.data, (a, b), "*")

        def backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, _unbroadcast(b.data * g, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(a.data * g, b.data.shape))

        return _finish(out, backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, _ensure(other)
        out = _node(a.data / b.data, (a, b), "/")

        def backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return _finish(out, backward)

    def __rtruediv__(self, other):
        return _ensure(other) / self

    def __matmul__(self, other):
        a, b = self, _ensure(other)
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ShapeError(
                f"matmul needs 2-D operands, got {a.data.shape} @ {b.data.shape}"
            )
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(
                f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
            )
        out = _node(a.data @ b.data, (a, b), "@")

        def backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g @ b.data.T)
            if b.requires_grad:
                _accumulate(b, a.data.T @ g)

        return _finish(out, backward)

    def __getitem__(self, key):
        a = self
        out = _node(a.data[key], (a,), "getitem")

        def backward():
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.add.at(full, key, out.grad)
                _accumulate(a, full)

        return _finish(out, backward)

    # -- shape ops --------------------------------------------------------

    def reshape(self, shape):
        a = self
        out = _node(a.data.reshape(shape), (a,), "reshape")

        def backward():
            if a.requires_grad:
                _accumulate(a, out.grad.reshape(a.data.shape))

        return _finish(out, backward)

    @property
    def T(self):
        a = self
        if a.data.ndim != 2:
            raise ShapeError(f"transpose needs a 2-D tensor, got shape {a.data.shape}")
        out = _node(a.data.T.copy(), (a,), "T")

        def backward():
            if a.requires_grad:
                _accumulate(a, out.grad.T)

        return _finish(out, backward)

    # -- reductions --------------------------------------------------------

    def sum(self):
        a = self
        out = _node(a.data.sum(), (a,), "sum")

        def backward():
            if a.requires_grad:
                _accumulate(a, np.broadcast_to(out.grad, a.data.shape))

        return _finish(out, backward)

    def mean(self):
        a = self
        out = _node(a.data.mean(), (a,), "mean")

        def backward():
            if a.requires_grad:
                _accumulate(a, np.broadcast_to(out.grad / a.data.size, a.data.shape))

        return _finish(out, backward)


def _ensure(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, prev, op):
    out = Tensor(data)
    out._prev = tuple(prev)
    out._op = op
    out.requires_grad = any(p.requires_grad for p in out._prev)
    return out


def _finish(out, backward):
    if out.requires_grad:
        out._backward = backward
    return out


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def relu(x):
    a = _ensure(x)
    out = _node(np.maximum(a.data, 0.0), (a,), "relu")

    def backward():
        if a.requires_grad:
            _accumulate(a, (a.data > 0.0) * out.grad)

    return _finish(out, backward)


def sigmoid(x):
    """Numerically stable logistic; outputs clamped strictly inside (0, 1)."""
    a = _ensure(x)
    z = a.data
    s = np.empty_like(z)
    pos = z >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    s[~pos] = ez / (1.0 + ez)
    np.clip(s, _ZERO_PLUS, _ONE_MINUS, out=s)
    out = _node(s, (a,), "sigmoid")

    def backward():
        if a.requires_grad:
            _accumulate(a, s * (1.0 - s) * out.grad)

    return _finish(out, backward)


def softmax_rows(x):
    """Softmax along the last axis of a 2-D tensor."""
    a = _ensure(x)
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-D tensor, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = _node(y, (a,), "softmax")

    def backward():
        if a.requires_grad:
            g = out.grad
            _accumulate(a, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _finish(out, backward)


def concat(tensors, axis=0):
    """Concatenate tensors along ``axis``; gradient splits back per input."""
    parts = [_ensure(t) for t in tensors]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    out = _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), "concat")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward():
        pieces = np.split(out.grad, offsets, axis=axis)
        for p, piece in zip(parts, pieces):
            if p.requires_grad:
                _accumulate(p, piece)

    return _finish(out, backward)


def dropout(x, rate, mode, rng=None):
    """Inverted dropout: zero entries with probability ``rate`` in train
    mode and scale survivors by 1/(1-rate); eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    x = _ensure(x)
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode needs a seeded generator")
    keep = rng.random(x.data.shape) >= rate
    return x * Tensor(keep.astype(np.float64) / (1.0 - rate))


def mse_loss(pred, target):
    """Mean squared error; the gradient w.r.t. pred is (2/n)(pred - target)."""
    pred = _ensure(pred)
    target = _ensure(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss shape mismatch: pred {pred.data.shape} vs target {target.data.shape}"
        )
    if pred.data.size == 0:
        raise ShapeError("mse_loss needs at least one element")
    diff = pred - target
    return (diff * diff).mean()


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()

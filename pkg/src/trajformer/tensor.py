"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records a backward closure on the implicit tape (creation
order doubles as topological order). Gradients accumulate additively;
callers zero them between optimizer steps. Storage is contiguous row-major
float64 throughout; slices copy rather than alias.
"""

import itertools

import numpy as np

_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(RuntimeError):
    """Raised when an operation's contract is violated (e.g. non-scalar loss)."""


def _asarray(x):
    a = np.ascontiguousarray(x, dtype=np.float64)
    return a


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` by summing over broadcast axes."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph.

    Attributes:
        data: contiguous float64 ndarray.
        grad: accumulated gradient (same shape as data) or None.
        requires_grad: whether gradients flow into this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = _asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._id = next(_ids)

    # ------------------------------------------------------------------
    # bookkeeping

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.data.shape)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        """Backpropagate from a scalar loss through the recorded tape."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        # Reachable subgraph, visited once each in reverse creation order.
        # Parents are always created before children, so descending id is a
        # valid reverse topological order.
        seen = {self._id: self}
        stack = [self]
        while stack:
            node = stack.pop()
            for p in node._parents:
                if p._id not in seen:
                    seen[p._id] = p
                    stack.append(p)
        grads = {self._id: np.ones_like(self.data)}
        for node in sorted(seen.values(), key=lambda t: t._id, reverse=True):
            g = grads.pop(node._id, None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is not None:
                node._backward(g, grads)

    # ------------------------------------------------------------------
    # arithmetic

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
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return slice_(self, key)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _binary(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"cannot broadcast shapes {a.data.shape} and {b.data.shape}"
        ) from None
    return a, b


def _make(data, parents, backward):
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, _parents=parents,
                  _backward=backward if rg else None)


def _send(grads, node, g):
    """Route gradient g to `node` during a backward sweep."""
    if not node.requires_grad:
        return
    g = _unbroadcast(g, node.data.shape)
    if node._id in grads:
        grads[node._id] = grads[node._id] + g
    else:
        grads[node._id] = g


# ----------------------------------------------------------------------
# elementwise primitives


def add(a, b):
    a, b = _binary(a, b)

    def backward(g, grads):
        _send(grads, a, g)
        _send(grads, b, g)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _binary(a, b)

    def backward(g, grads):
        _send(grads, a, g)
        _send(grads, b, -g)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _binary(a, b)

    def backward(g, grads):
        _send(grads, a, g * b.data)
        _send(grads, b, g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out_data = a.data ** p

    def backward(g, grads):
        _send(grads, a, g * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), backward)


def relu(a):
    a = as_tensor(a)
    keep = a.data > 0

    def backward(g, grads):
        _send(grads, a, g * keep)

    return _make(np.where(keep, a.data, 0.0), (a,), backward)


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)

    def backward(g, grads):
        _send(grads, a, g * (1.0 - y * y))

    return _make(y, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    # Split by sign to avoid overflow in exp.
    y = np.where(a.data >= 0,
                 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def backward(g, grads):
        _send(grads, a, g * y * (1.0 - y))

    return _make(y, (a,), backward)


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)

    def backward(g, grads):
        _send(grads, a, g * y)

    return _make(y, (a,), backward)


def log(a):
    a = as_tensor(a)

    def backward(g, grads):
        _send(grads, a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


# ----------------------------------------------------------------------
# reductions and structure


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    y = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.size / y.size

    def backward(g, grads):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(grads, a, np.broadcast_to(g / count, a.data.shape))

    return _make(y, (a,), backward)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g, grads):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(grads, a, np.broadcast_to(g, a.data.shape))

    return _make(y, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")

    def backward(g, grads):
        _send(grads, a, g @ np.swapaxes(b.data, -1, -2))
        _send(grads, b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), backward)


def softmax(a, axis=-1):
    """Numerically stable softmax along `axis` (max-subtraction)."""
    a = as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {a.data.ndim}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g, grads):
        _send(grads, a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.data.shape[-1] != x.data.shape[-1] or bias.data.shape[-1] != x.data.shape[-1]:
        raise ShapeError(
            f"layer_norm gain/bias {gain.data.shape}/{bias.data.shape} do not "
            f"match trailing dim of {x.data.shape}"
        )
    mu = mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gain), bias)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, grads):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _send(grads, t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g, grads):
        _send(grads, a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.data.shape

    def backward(g, grads):
        _send(grads, a, g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), backward)


def slice_(a, key):
    """Basic indexing with copy-out semantics (no aliasing views)."""
    a = as_tensor(a)
    out_data = np.ascontiguousarray(a.data[key])

    def backward(g, grads):
        full = np.zeros_like(a.data)
        full[key] = g.reshape(full[key].shape)
        _send(grads, a, full)

    return _make(out_data, (a,), backward)


def embedding_lookup(table, indices):
    """Gather rows of `table` by an integer index array."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)

    def backward(g, grads):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _send(grads, table, full)

    return _make(table.data[idx], (table,), backward)


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient is zero outside the interval."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g, grads):
        _send(grads, a, g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), backward)


def grad_reverse(x, lam=1.0):
    """Identity forward; backward multiplies the gradient by -lam."""
    x = as_tensor(x)
    lam = float(lam)

    def backward(g, grads):
        _send(grads, x, -lam * g)

    return _make(x.data.copy(), (x,), backward)

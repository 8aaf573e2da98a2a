"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run tape: every primitive records its parents and an adjoint
closure; ``backward`` walks the graph in reverse topological order.  No
broadcasting beyond bias-row addition, by design.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_adjoint")

    def __init__(self, data, requires_grad=False, _parents=(), _adjoint=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._adjoint = _adjoint

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.ndim != 0 and self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._adjoint is None:
                continue
            for parent, pg in zip(node._parents, node._adjoint(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(cond, primitive, *shapes):
    if not cond:
        raise ShapeError(f"{primitive}: incompatible shapes {list(shapes)}")


def constant(data):
    return Tensor(data)


def parameter(data):
    return Tensor(data, requires_grad=True)


# --------------------------------------------------------------------------
# Primitives.

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check(a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0],
           "matmul", a.shape, b.shape)
    out = Tensor(a.data @ b.data, _parents=(a, b),
                 _adjoint=lambda g: (g @ b.data.T, a.data.T @ g))
    return out


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    row_bias = (a.data.ndim == 2 and b.data.ndim == 2 and b.shape[0] == 1
                and a.shape[1] == b.shape[1])
    _check(a.shape == b.shape or row_bias, "add", a.shape, b.shape)

    def adjoint(g):
        gb = g.sum(axis=0, keepdims=True) if row_bias else g
        return g, gb

    return Tensor(a.data + b.data, _parents=(a, b), _adjoint=adjoint)


def sub(a, b):
    return add(a, scale(b, -1.0))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check(a.shape == b.shape, "mul", a.shape, b.shape)
    return Tensor(a.data * b.data, _parents=(a, b),
                  _adjoint=lambda g: (g * b.data, g * a.data))


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check(a.shape == b.shape, "div", a.shape, b.shape)
    return Tensor(a.data / b.data, _parents=(a, b),
                  _adjoint=lambda g: (g / b.data, -g * a.data / b.data**2))


def scale(a, s):
    a = _as_tensor(a)
    s = float(s)
    return Tensor(a.data * s, _parents=(a,), _adjoint=lambda g: (g * s,))


def scale_rows(a, s):
    """Multiply row i of a by scalar s[i]; s has shape (n,) or (n, 1)."""
    a, s = _as_tensor(a), _as_tensor(s)
    sv = s.data.reshape(-1)
    _check(a.data.ndim == 2 and sv.shape[0] == a.shape[0], "scale_rows",
           a.shape, s.shape)

    def adjoint(g):
        return g * sv[:, None], (g * a.data).sum(axis=1).reshape(s.shape)

    return Tensor(a.data * sv[:, None], _parents=(a, s), _adjoint=adjoint)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    _check(len(tensors) > 0, "concat")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def adjoint(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  _parents=tuple(tensors), _adjoint=adjoint)


def slice_rows(a, start, stop):
    a = _as_tensor(a)

    def adjoint(g):
        out = np.zeros_like(a.data)
        out[start:stop] = g
        return (out,)

    return Tensor(a.data[start:stop], _parents=(a,), _adjoint=adjoint)


def slice_cols(a, start, stop):
    a = _as_tensor(a)
    _check(a.data.ndim == 2, "slice_cols", a.shape)

    def adjoint(g):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)

    return Tensor(a.data[:, start:stop], _parents=(a,), _adjoint=adjoint)


def transpose(a):
    a = _as_tensor(a)
    _check(a.data.ndim == 2, "transpose", a.shape)
    return Tensor(a.data.T, _parents=(a,), _adjoint=lambda g: (g.T,))


def sum_(a, axis=None):
    a = _as_tensor(a)

    def adjoint(g):
        if axis is None:
            return (np.full_like(a.data, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Tensor(a.data.sum(axis=axis), _parents=(a,), _adjoint=adjoint)


def mean(a, axis=None):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / n)


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)
    return Tensor(out_data, _parents=(a,), _adjoint=lambda g: (g * out_data,))


def log(a):
    a = _as_tensor(a)
    return Tensor(np.log(a.data), _parents=(a,), _adjoint=lambda g: (g / a.data,))


def sqrt(a):
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)
    return Tensor(out_data, _parents=(a,),
                  _adjoint=lambda g: (g / (2.0 * out_data),))


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)
    return Tensor(out_data, _parents=(a,),
                  _adjoint=lambda g: (g * (1.0 - out_data**2),))


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return Tensor(a.data * mask, _parents=(a,), _adjoint=lambda g: (g * mask,))


def leaky_relu(a, alpha=0.2):
    a = _as_tensor(a)
    slope = np.where(a.data > 0, 1.0, alpha)
    return Tensor(a.data * slope, _parents=(a,), _adjoint=lambda g: (g * slope,))


def elu(a, alpha=1.0):
    a = _as_tensor(a)
    neg = alpha * (np.exp(np.minimum(a.data, 0.0)) - 1.0)
    out_data = np.where(a.data > 0, a.data, neg)
    deriv = np.where(a.data > 0, 1.0, neg + alpha)
    return Tensor(out_data, _parents=(a,), _adjoint=lambda g: (g * deriv,))


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def adjoint(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return Tensor(out_data, _parents=(a,), _adjoint=adjoint)


def masked_fill(a, mask, value):
    """Replace entries where mask is True by a constant (commonly -inf)."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    _check(mask.shape == a.shape, "masked_fill", a.shape, mask.shape)
    out_data = np.where(mask, value, a.data)
    return Tensor(out_data, _parents=(a,),
                  _adjoint=lambda g: (np.where(mask, 0.0, g),))


def _rows_scatter_sum(g, indices, n_rows):
    """Sum rows of g into n_rows bins given by indices (fast np.add.at)."""
    out = np.empty((n_rows, g.shape[1]))
    for j in range(g.shape[1]):
        out[:, j] = np.bincount(indices, weights=g[:, j], minlength=n_rows)
    return out


def embedding_lookup(table, indices):
    table = _as_tensor(table)
    indices = np.asarray(indices, dtype=np.int64)
    _check(table.data.ndim == 2, "embedding_lookup", table.shape)

    def adjoint(g):
        return (_rows_scatter_sum(g, indices, table.shape[0]),)

    return Tensor(table.data[indices], _parents=(table,), _adjoint=adjoint)


def gather_rows(a, indices):
    a = _as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    _check(a.data.ndim == 2, "gather_rows", a.shape)

    def adjoint(g):
        return (_rows_scatter_sum(g, indices, a.shape[0]),)

    return Tensor(a.data[indices], _parents=(a,), _adjoint=adjoint)


def scatter_add_rows(a, indices, n_rows):
    """out[indices[k]] += a[k]; output has n_rows rows."""
    a = _as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    _check(a.data.ndim == 2 and len(indices) == a.shape[0], "scatter_add_rows",
           a.shape, indices.shape)
    out_data = _rows_scatter_sum(a.data, indices, n_rows)
    return Tensor(out_data, _parents=(a,), _adjoint=lambda g: (g[indices],))


# --------------------------------------------------------------------------
# Finite-difference gradient checking.

def grad_check(f, params, eps=1e-5):
    """Max relative error between backward grads and central differences.

    f is a nullary function of the (mutable) params returning a scalar Tensor.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.array(p.grad, copy=True) if p.grad is not None
                else np.zeros_like(p.data) for p in params]
    worst = 0.0
    for p, a_grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().data)
            flat[i] = orig - eps
            lo = float(f().data)
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
        err = np.abs(a_grad.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
        worst = max(worst, float(err.max(initial=0.0)))
    return worst

"""Dense numpy-backed tensors with tape-based reverse-mode differentiation.

Operations always compute their forward value.  When a :class:`Tape` is
active and at least one input requires a gradient, the operation is appended
to the tape together with a closure computing its vector-Jacobian product.
Nodes are stored in creation order, which is a valid topological order, so
``Tape.backward`` is a single reverse sweep.
"""
from __future__ import annotations

import contextlib
import itertools

import numpy as np

LEAKY_SLOPE = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
MASK_OFF = -np.inf

_dtype = np.float32
_tapes: list["Tape"] = []
_ids = itertools.count()


def default_dtype():
    return _dtype


def set_default_dtype(dtype):
    global _dtype
    _dtype = np.dtype(dtype).type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    old = _dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "node_id")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f" or arr.dtype != _dtype:
            arr = arr.astype(_dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    __hash__ = object.__hash__

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the block are
    recorded.  ``backward`` may be called once per tape.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple, object]] = []
        self._consumed = False

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)
        return False

    def record(self, out, parents, vjp):
        out.node_id = len(self.nodes)
        self.nodes.append((out, parents, vjp))

    def backward(self, loss, wrt):
        """Gradients of scalar ``loss`` with respect to ``wrt``.

        ``wrt`` is a mapping name -> Tensor or a sequence of tensors; the
        result has the same keys (indices for sequences).  Tensors that do
        not influence ``loss`` get zero gradients.
        """
        if self._consumed:
            raise RuntimeError("backward already called on this tape; start a new Tape")
        self._consumed = True
        if loss.data.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for out, parents, vjp in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            # keep the output gradient available if the caller asked for it
            if out.requires_grad and out.node_id is not None and _is_target(out, wrt):
                grads[("keep", id(out))] = g
            for parent, pg in zip(parents, vjp(g)):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        items = wrt.items() if isinstance(wrt, dict) else enumerate(wrt)
        result = {}
        for k, t in items:
            g = grads.get(id(t))
            if g is None:
                g = grads.get(("keep", id(t)))
            result[k] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.data.dtype)
        return result


def _is_target(t, wrt):
    values = wrt.values() if isinstance(wrt, dict) else wrt
    return any(v is t for v in values)


def _make(value, parents, vjp):
    out = Tensor(value)
    if _tapes and any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        out.requires_grad = True
        _tapes[-1].record(out, parents, vjp)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=_dtype)


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _make(out, (a, b), vjp)


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a, slope=LEAKY_SLOPE):
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)
    return _make(out, (a,), lambda g: (np.where(pos, g, slope * g),))


def clamp_max(a, bound):
    """min(a, bound); gradient is zero where a exceeds the bound."""
    keep = a.data <= bound
    return _make(np.minimum(a.data, bound), (a,), lambda g: (g * keep,))


def clamp_min(a, bound):
    keep = a.data >= bound
    return _make(np.maximum(a.data, bound), (a,), lambda g: (g * keep,))


# ------------------------------------------------------------------ reductions

def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(logits, mask=None, axis=-1):
    """Softmax along ``axis`` with an optional additive mask.

    ``mask`` holds 0 for allowed entries and ``-inf`` (``MASK_OFF``) for
    forbidden ones.  Forbidden entries get probability exactly 0 and a zero
    gradient; a slice with every entry forbidden yields all zeros.
    """
    x = logits.data if mask is None else logits.data + _data(mask)
    top = np.max(x, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(x - top)
    z = e.sum(axis=axis, keepdims=True)
    out = np.divide(e, z, out=np.zeros_like(e), where=z > 0)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (logits,), vjp)


def mask_from_bool(allowed):
    """Boolean allowed-array -> additive softmax mask."""
    return np.where(allowed, 0.0, MASK_OFF).astype(_dtype)


# --------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)
    return _make(a.data @ b.data, (a, b), vjp)


def linear(x, w, b=None):
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def vjp(g):
        gb = None if b is None else g.reshape(-1, g.shape[-1]).sum(axis=0)
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return (g @ w.data.T, gw, gb)
    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, vjp)


def transpose(a):
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def getitem(a, index):
    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)
    return _make(a.data[index], (a,), vjp)


def take(a, rows):
    """Gather rows of ``a`` (embedding lookup / node gather)."""
    rows = np.asarray(rows, dtype=np.intp)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, rows, g)
        return (full,)
    return _make(a.data[rows], (a,), vjp)


def segment_sum(a, segments, n):
    """out[s] = sum of rows i with segments[i] == s, for s < n."""
    segments = np.asarray(segments, dtype=np.intp)
    out = np.zeros((n,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(out, segments, a.data)
    return _make(out, (a,), lambda g: (g[segments],))


# ----------------------------------------------------------------- batch norm

class BatchNormState:
    """Running statistics of one batch-norm layer."""

    def __init__(self, width):
        self.running_mean = np.zeros(width, dtype=_dtype)
        self.running_var = np.ones(width, dtype=_dtype)


def batch_norm(x, gamma, beta, state, training):
    """Normalise over rows of ``x``.

    Training mode uses the batch statistics and folds them into
    ``state`` as ``running = 0.9 * running + 0.1 * batch``; evaluation mode
    uses the running statistics and is an affine map of ``x``.
    """
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        state.running_mean = (BN_MOMENTUM * state.running_mean + (1 - BN_MOMENTUM) * mu).astype(state.running_mean.dtype)
        state.running_var = (BN_MOMENTUM * state.running_var + (1 - BN_MOMENTUM) * var).astype(state.running_var.dtype)
    else:
        mu = state.running_mean
        var = state.running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[0]

    def vjp(g):
        gg = (g * xhat).sum(axis=0)
        gb = g.sum(axis=0)
        gxhat = g * gamma.data
        if training:
            gx = inv / n * (n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
        else:
            gx = gxhat * inv
        return (gx, gg, gb)
    return _make(out, (x, gamma, beta), vjp)


def check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {name}")

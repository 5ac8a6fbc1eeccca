"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray``. Operations on tensors that require
gradients record a closure that maps the output gradient to input gradients;
:meth:`Tensor.backward` replays those closures in reverse topological order.
Nodes that do not (transitively) depend on a trainable leaf are never
recorded, so frozen parameters cost nothing in the backward pass.
"""
from contextlib import contextmanager

import numpy as np

from . import kernels

_GRAD_ENABLED = True
_CHECK_FINITE = False
LOG_FLOOR = 1e-12


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    pass


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_check_finite(flag):
    """Validate every op output for NaN/Inf (slow; meant for tests and debugging)."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = bool(flag)
    return prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def detach(self):
        """Same values, cut from the graph (stop-gradient)."""
        return Tensor(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if self._backward is None:
            raise GraphError("backward() called on a tensor with no recorded computation; "
                             "run a forward pass with gradients enabled first")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order = _topo_order(self)
        grads = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # trainable leaf
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            # one-shot graph: free closures so a second backward fails loudly
            node._backward = None
            node._parents = ()

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_pair(other, self)[0]))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _make(data, parents, backward):
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite values produced by an operation")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b):
    # scalars adopt the tensor operand's dtype so float32 graphs stay float32
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    return a, b


def add(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)))


def matmul(a, b):
    """``a @ b`` where ``b`` is either 2-D (shared weight) or batched like ``a``."""
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(out, (a, b), backward)


def reshape(a, shape):
    orig = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, idx):
    shape, dtype = a.shape, a.data.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), backward)


def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def concat(tensors, axis):
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def broadcast_to(a, shape):
    orig = a.shape
    return _make(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, orig),))


def embedding(weight, ids):
    """Row gather ``weight[ids]``; gradient scatter-adds in index order."""
    ids = np.asarray(ids)

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (full,)

    return _make(weight.data[ids], (weight,), backward)


def softmax(a):
    """Softmax over the last axis (max-subtracted)."""
    shape = a.shape
    y = kernels.softmax_rows(kernels.as_rows(a.data))

    def backward(g):
        return (kernels.softmax_rows_backward(y, kernels.as_rows(g)).reshape(shape),)

    return _make(y.reshape(shape), (a,), backward)


def log_softmax(a):
    """Log-softmax over the last axis."""
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(out, (a,), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    shape = x.shape
    y, xhat, rstd = kernels.layernorm_rows(kernels.as_rows(x.data), gamma.data, beta.data, eps)

    def backward(g):
        gx, gg, gb = kernels.layernorm_rows_backward(kernels.as_rows(g), xhat, rstd, gamma.data)
        return gx.reshape(shape), gg, gb

    return _make(y.reshape(shape), (x, gamma, beta), backward)


def gelu(x):
    shape = x.shape
    xr = kernels.as_rows(x.data)
    y, t = kernels.gelu(xr)

    def backward(g):
        return (kernels.gelu_backward(xr, t, kernels.as_rows(g)).reshape(shape),)

    return _make(y.reshape(shape), (x,), backward)


def dropout(x, rate, rng):
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.data.dtype)
    keep *= 1.0 / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy_logits(logits, target, reduction="mean"):
    """``-sum(target * log softmax(logits))`` per row, log floored at ``ln(1e-12)``.

    ``target`` is a numpy array of simplex rows (one-hot or soft) or a Tensor,
    which is then treated as a constant.
    """
    if isinstance(target, Tensor):
        target = target.data
    target = np.asarray(target, dtype=logits.data.dtype)
    if target.shape != logits.shape:
        raise ValueError(f"target shape {target.shape} != logits shape {logits.shape}")
    logp = log_softmax(logits)
    floor = np.log(LOG_FLOOR)
    if np.any(logp.data < floor):
        mask = (logp.data >= floor).astype(logp.data.dtype)
        logp = _make(np.maximum(logp.data, floor), (logp,), lambda g: (g * mask,))
    per_row = neg(tsum(mul(logp, target), axis=-1))
    if reduction == "none":
        return per_row
    if reduction == "sum":
        return tsum(per_row)
    return tmean(per_row)

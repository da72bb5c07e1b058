"""Dense-tensor engine with tape-recorded reverse-mode differentiation.

Every op wraps numpy forward math and registers a backward closure on the
output tensor when gradients are wanted; backward(loss) replays the
recorded graph in reverse topological order. float32 is the training
default, float64 is used for gradient checks. Reductions keep numpy's
row-major accumulation so repeated runs are bitwise identical.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (inference / weight surgery)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus gradient bookkeeping.

    `grad` stays None until backward() reaches the tensor; tensors with
    requires_grad=False never receive one.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def _make(data, parents):
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = req
    out.grad = None
    out._parents = tuple(parents) if req else ()
    out._backward = None
    return out


def _accumulate(t, g):
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    if t.grad is None:
        # always copy: g may alias another tensor's grad buffer
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum g over the axes numpy broadcast relative to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss):
    """Populate grads of every requires_grad tensor reachable from `loss`."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not require grad; nothing was recorded")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# ----------------------------------------------------------------- primitives

def matmul(a, b):
    """Matrix product; last two axes contract, leading axes broadcast."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul shapes incompatible: {a.data.shape} @ {b.data.shape}")
    out = _make(np.matmul(a.data, b.data), (a, b))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))
        out._backward = _bw
    return out


def add(a, b):
    out = _make(a.data + b.data, (a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(out.grad, b.data.shape))
        out._backward = _bw
    return out


def mul(a, b):
    out = _make(a.data * b.data, (a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))
        out._backward = _bw
    return out


def scale(a, s):
    s = float(s)
    out = _make(a.data * a.data.dtype.type(s), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad * a.data.dtype.type(s))
        out._backward = _bw
    return out


def transpose(a, axes):
    out = _make(np.ascontiguousarray(np.transpose(a.data, axes)), (a,))
    if out.requires_grad:
        inv = tuple(np.argsort(axes))

        def _bw():
            _accumulate(a, np.transpose(out.grad, inv))
        out._backward = _bw
    return out


def reshape(a, shape):
    out = _make(np.reshape(a.data, shape), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad.reshape(a.data.shape))
        out._backward = _bw
    return out


def take(a, idx):
    """Basic (slice/integer) indexing with gradient scatter-add."""
    out = _make(np.ascontiguousarray(a.data[idx]), (a,))
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            _accumulate(a, g)
        out._backward = _bw
    return out


def concat(tensors, axis):
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def _bw():
            pieces = np.split(out.grad, splits, axis=axis)
            for t, piece in zip(tensors, pieces):
                if t.requires_grad:
                    _accumulate(t, piece)
        out._backward = _bw
    return out


def expand(a, shape):
    """Broadcast to `shape`; gradient sums back over the broadcast axes."""
    out = _make(np.ascontiguousarray(np.broadcast_to(a.data, shape)), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        out._backward = _bw
    return out


def tsum(a, axis=None, keepdims=False):
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        out._backward = _bw
    return out


def tmean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ------------------------------------------------------------- nn primitives

def linear(x, w, b=None):
    """x @ w.T + b with w of shape (out_features, in_features)."""
    if x.data.shape[-1] != w.data.shape[-1]:
        raise DimensionError(
            f"linear: input feature size {x.data.shape[-1]} != weight in-size "
            f"{w.data.shape[-1]} (weight {w.data.shape})")
    y = np.matmul(x.data, w.data.T)
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = _make(y, parents)
    if out.requires_grad:
        def _bw():
            g = out.grad
            g2 = g.reshape(-1, g.shape[-1])
            if x.requires_grad:
                _accumulate(x, np.matmul(g, w.data))
            if w.requires_grad:
                x2 = x.data.reshape(-1, x.data.shape[-1])
                _accumulate(w, g2.T @ x2)
            if b is not None and b.requires_grad:
                _accumulate(b, g2.sum(axis=0))
        out._backward = _bw
    return out


def softmax(a, axis=-1):
    if not -a.data.ndim <= axis < a.data.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {a.data.shape}")
    moved = np.moveaxis(a.data, axis, -1)
    n = moved.shape[-1]
    y2 = kernels.softmax_forward(np.ascontiguousarray(moved.reshape(-1, n)))
    y = np.moveaxis(y2.reshape(moved.shape), -1, axis)
    out = _make(np.ascontiguousarray(y), (a,))
    if out.requires_grad:
        def _bw():
            gmoved = np.moveaxis(out.grad, axis, -1)
            dx2 = kernels.softmax_backward(y2, np.ascontiguousarray(gmoved.reshape(-1, n)))
            _accumulate(a, np.moveaxis(dx2.reshape(gmoved.shape), -1, axis))
        out._backward = _bw
    return out


def gelu(a):
    """tanh-approximation GELU, constants pinned in kernels."""
    out = _make(kernels.gelu_forward(a.data), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, kernels.gelu_backward(a.data, out.grad))
        out._backward = _bw
    return out


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    n = x.data.shape[-1]
    if gamma.data.shape != (n,) or beta.data.shape != (n,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match normalized size {n}")
    x2 = np.ascontiguousarray(x.data.reshape(-1, n))
    y2, xhat, inv_std = kernels.layer_norm_forward(x2, gamma.data, beta.data, eps)
    out = _make(y2.reshape(x.data.shape), (x, gamma, beta))
    if out.requires_grad:
        def _bw():
            g2 = np.ascontiguousarray(out.grad.reshape(-1, n))
            dx, dgamma, dbeta = kernels.layer_norm_backward(xhat, inv_std, gamma.data, g2)
            if x.requires_grad:
                _accumulate(x, dx.reshape(x.data.shape))
            if gamma.requires_grad:
                _accumulate(gamma, dgamma)
            if beta.requires_grad:
                _accumulate(beta, dbeta)
        out._backward = _bw
    return out


def cross_entropy(logits, labels):
    """Mean negative log softmax probability of the labeled class.

    logits: (num_classes,) or (batch, num_classes); labels: int or int array.
    """
    z = logits.data
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    labels = np.atleast_1d(np.asarray(labels))
    if labels.shape[0] != z.shape[0]:
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for batch {z.shape[0]}")
    num_classes = z.shape[1]
    if labels.min() < 0 or labels.max() >= num_classes:
        raise IndexError(f"label out of range [0, {num_classes}): {labels}")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    batch = z.shape[0]
    rows = np.arange(batch)
    loss_val = -logp[rows, labels].mean(dtype=z.dtype)
    out = _make(np.asarray(loss_val, dtype=z.dtype), (logits,))
    if out.requires_grad:
        def _bw():
            p = np.exp(logp)
            p[rows, labels] -= 1.0
            g = (out.grad * p / batch).astype(z.dtype)
            _accumulate(logits, g[0] if squeeze else g)
        out._backward = _bw
    return out

"""Small reverse-mode differentiation engine on top of numpy.

Every value is a float64 ``Tensor``. Operations on tensors that require
gradients record a closure mapping the output gradient to the input
gradients; ``Tensor.backward`` walks the recorded graph in reverse
topological order, accumulates into the ``grad`` of leaf tensors and then
releases the graph.

Only the operations needed by the feedback system are provided: dense
algebra, reductions, a handful of elementwise functions, batch
normalization and the standard normal CDF.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, GraphError

_LN2 = math.log(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    # make ndarray <op> Tensor defer to the reflected Tensor method
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(self.data) if (requires_grad and _backward is None) else None
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # ------------------------------------------------------------------ graph

    def backward(self):
        """Accumulate d(self)/d(leaf) into every leaf's ``grad``.

        ``self`` must be a scalar produced by recorded operations. The graph
        is released afterwards, so a second call raises ``GraphError``.
        """
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._backward is None:
            raise GraphError("no recorded forward pass to differentiate "
                             "(constant tensor, leaf, or graph already released)")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node.requires_grad = False

    # -------------------------------------------------------------- operators

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
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    """Build an op output, recording the graph only if some input needs it."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        gb = g / b.data
        return _unbroadcast(gb, a.shape), _unbroadcast(-gb * out, b.shape)
    return _result(out, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)
    return _result(a.data ** exponent, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy ``@`` semantics (batched over leading axes)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ConfigError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ConfigError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))
    return _result(a.data @ b.data, (a, b), backward)


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


# ------------------------------------------------------------------- shaping

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g.reshape(a.shape),)
    return _result(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inverse = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)
    return _result(np.transpose(a.data, axes), (a,), backward)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is None or p is Ellipsis or isinstance(p, (int, slice)) for p in parts)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)
    return _result(a.data[index], (a,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# --------------------------------------------------------------- elementwise

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def log2(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log2(a.data), (a,), lambda g: (g / (a.data * _LN2),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _result(out, (a,), lambda g: (g * (out > 0),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    # d/dx log(1 + e^x) = sigmoid(x), written to avoid overflow
    sig = np.exp(a.data - out)
    return _result(out, (a,), lambda g: (g * sig,))


def normal_cdf(a) -> Tensor:
    """Standard normal CDF, Phi(x)."""
    a = as_tensor(a)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
    return _result(ndtr(a.data), (a,), lambda g: (g * pdf,))


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); gradient flows only where a > floor. NaN propagates."""
    a = as_tensor(a)
    mask = a.data > floor
    return _result(np.maximum(a.data, floor), (a,), lambda g: (g * mask,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


# ------------------------------------------------------------------- layers

def dense(x, weights, bias=None, activation: str | None = None) -> Tensor:
    """``x @ weights + bias`` as a single graph node, optionally followed by ReLU."""
    x, weights = as_tensor(x), as_tensor(weights)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ConfigError(f"dense: input {x.shape} does not conform to weights {weights.shape}")
    if activation not in (None, "relu"):
        raise ConfigError(f"unsupported activation {activation!r}")
    out = x.data @ weights.data
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weights.shape[1],):
            raise ConfigError(f"dense: bias shape {bias.shape} != ({weights.shape[1]},)")
        out += bias.data
    if activation == "relu":
        np.maximum(out, 0.0, out=out)

    def backward(g):
        if activation == "relu":
            g = g * (out > 0)
        gx = g @ weights.data.T if x.requires_grad else None
        gw = x.data.T @ g if weights.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weights) if bias is None else (x, weights, bias)
    return _result(out, parents, backward)


def batch_norm(x, mean_: np.ndarray, var: np.ndarray, scale, shift, eps: float,
               batch_stats: bool) -> Tensor:
    """Fused batch normalization over axis 0.

    With ``batch_stats`` the supplied ``mean_``/``var`` must be the biased batch
    moments of ``x`` and the gradient includes their dependence on ``x``;
    otherwise they are treated as constants (running statistics).
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = x.data - mean_
    xhat *= inv_std
    out = xhat * scale.data
    out += shift.data
    n = x.shape[0]

    def backward(g):
        gscale = np.einsum("ij,ij->j", g, xhat)
        gshift = g.sum(axis=0)
        if not x.requires_grad:
            return None, gscale, gshift
        gxhat = g * scale.data
        if batch_stats:
            gx = gxhat
            gx -= gshift * (scale.data / n)
            gx -= xhat * (gscale * (scale.data / n))
            gx *= inv_std
        else:
            gx = gxhat * inv_std
        return gx, gscale, gshift
    return _result(out, (x, scale, shift), backward)

"""Dense float64 tensors with reverse-mode automatic differentiation.

Broadcasting is deliberately narrow: elementwise ops need equal shapes or a
Python scalar, ``add_bias`` covers the per-row vector case, and anything else
goes through an explicit ``broadcast_to`` node so the graph stays auditable.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NumericError, ShapeError, UsageError
from . import kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- autodiff ---------------------------------------------------------
    def backward(self):
        """Populate ``.grad`` on every grad-requiring tensor feeding this scalar."""
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that does not require grad")
        order = _topological(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    # grads are never updated in place, so only leaves need a private copy
                    if parent._backward is None:
                        g = np.array(g, dtype=np.float64, copy=True)
                    parent.grad = np.asarray(g, dtype=np.float64).reshape(parent.shape)
                else:
                    parent.grad = parent.grad + g.reshape(parent.shape)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -other if not isinstance(other, Tensor) else neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _topological(root: Tensor) -> list:
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
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        b = float(b)
        return _result(a.data + b, (a,), lambda g: (g,))
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        s = float(b)
        return _result(a.data * s, (a,), lambda g: (g * s,))
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """``x[..., d] + bias[d]``."""
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.shape} and {bias.shape} are incompatible")
    d = bias.shape[0]
    return _result(x.data + bias.data, (x, bias), lambda g: (g, g.reshape(-1, d).sum(axis=0)))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums over expanded axes."""
    shape = tuple(shape)
    if x.ndim != len(shape):
        raise ShapeError(f"broadcast_to: rank of {x.shape} differs from {shape}")
    for have, want in zip(x.shape, shape):
        if have != want and have != 1:
            raise ShapeError(f"broadcast_to: cannot expand {x.shape} to {shape}")
    axes = tuple(i for i, (h, w) in enumerate(zip(x.shape, shape)) if h == 1 and w != 1)
    src_shape = x.shape

    def backward(g):
        return (g.sum(axis=axes, keepdims=True).reshape(src_shape),)

    return _result(np.ascontiguousarray(np.broadcast_to(x.data, shape)), (x,), backward)


def silu(x: Tensor) -> Tensor:
    shape = x.shape
    x2 = x.data.reshape(-1, shape[-1]) if x.ndim else x.data.reshape(1, 1)
    y, sig = kernels.silu_fwd(x2)

    def backward(g):
        return (kernels.silu_bwd(x2, sig, np.ascontiguousarray(g).reshape(x2.shape)).reshape(shape),)

    return _result(y.reshape(shape), (x,), backward)


# -- shape ------------------------------------------------------------------
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return _result(data, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )


def take(table: Tensor, index) -> Tensor:
    """Gather rows of a 2-D ``table`` by an integer array of any shape."""
    idx = np.asarray(index, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take: table must be 2-D, got {table.shape}")
    rows, d = table.shape
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise ShapeError(f"take: index out of range for table of {rows} rows")

    def backward(g):
        acc = np.zeros((rows, d))
        np.add.at(acc, idx.reshape(-1), g.reshape(-1, d))
        return (acc,)

    return _result(table.data[idx], (table,), backward)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise UsageError("stack: empty sequence")
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != first:
            raise ShapeError(f"stack: shapes {first} and {t.shape} differ")
    n = len(tensors)
    return _result(
        np.stack([t.data for t in tensors]),
        tuple(tensors),
        lambda g: tuple(g[i] for i in range(n)),
    )


# -- reductions -------------------------------------------------------------
def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _result(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target array."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {t.shape} differ")
    diff = pred.data - t
    n = diff.size
    return _result(np.asarray((diff * diff).mean()), (pred,), lambda g: (diff * (2.0 * float(g) / n),))


# -- linear algebra ---------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    ``a`` is (..., m, k). ``b`` is either a (k, p) matrix shared across the
    leading axes of ``a`` or a (..., k, p) stack with the same leading axes.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions of {a.shape} and {b.shape} do not agree")
    if b.ndim != 2 and b.shape[:-2] != a.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not agree")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    if bd.ndim == 2:
        k, p = bd.shape

        def backward(g):
            ga = np.matmul(g, bd.T) if a.requires_grad else None
            gb = ad.reshape(-1, k).T @ g.reshape(-1, p) if b.requires_grad else None
            return ga, gb
    else:

        def backward(g):
            ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
            gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
            return ga, gb

    return _result(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    y = matmul(x, weight)
    return add_bias(y, bias) if bias is not None else y


# -- normalisation / attention primitives ------------------------------------
def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; ``mask`` (broadcastable bool) zeroes entries exactly."""
    if np.isnan(x.data).any():
        raise NumericError("softmax: NaN in input")
    shape = x.shape
    n = shape[-1]
    x2 = x.data.reshape(-1, n)
    m2 = None
    if mask is not None:
        m2 = np.ascontiguousarray(np.broadcast_to(np.asarray(mask, dtype=bool), shape), dtype=np.uint8).reshape(-1, n)
    y = kernels.softmax_fwd(x2, m2)

    def backward(g):
        return (kernels.softmax_bwd(y, np.ascontiguousarray(g).reshape(-1, n)).reshape(shape),)

    return _result(y.reshape(shape), (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta_shift: Tensor, eps: float = 1e-5) -> Tensor:
    shape = x.shape
    d = shape[-1]
    if d < 1 or gamma.shape != (d,) or beta_shift.shape != (d,):
        raise ShapeError(f"layer_norm: {shape} with gamma {gamma.shape} and shift {beta_shift.shape}")
    x2 = x.data.reshape(-1, d)
    y, xhat, rstd = kernels.layernorm_fwd(x2, gamma.data, beta_shift.data, float(eps))

    def backward(g):
        gx, dgamma, dbeta = kernels.layernorm_bwd(np.ascontiguousarray(g).reshape(-1, d), xhat, rstd, gamma.data)
        return gx.reshape(shape), dgamma, dbeta

    return _result(y.reshape(shape), (x, gamma, beta_shift), backward)

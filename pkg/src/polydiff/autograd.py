"""Reverse-mode automatic differentiation over dense numpy tensors.

A Tensor wraps an ndarray and, when gradients are required, remembers the
operation that produced it.  The recording is dynamic: every forward pass
rebuilds the graph, and ``backward`` replays it in reverse topological
order, accumulating exact analytic adjoints.  When no operand requires a
gradient, ops degrade to plain numpy calls with nothing recorded, which is
the inference path used by the samplers.

Supported primitives: add, sub, mul, div, neg, pow (scalar exponent),
matmul (with broadcast leading dims), sum/mean over axes, exp, ln, sqrt,
tanh, sigmoid, SiLU, softmax / log-softmax (last axis), layer
normalization, concatenation, slicing, reshape/transpose, and embedding
lookup.  Gradient accumulation order is fixed by the recording, so
identical recordings yield bitwise-identical gradients.

Precision is a module-level switch (``set_default_dtype``): float64 for
the verification suite, float32 permitted for training.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Set the dtype new tensors are created with ('float32' or 'float64')."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported dtype {dtype!r}")
    _DEFAULT_DTYPE = dt.type


def get_default_dtype():
    return _DEFAULT_DTYPE


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over axes that were broadcast to reach ``grad.shape``."""
    if grad.shape == shape:
        return grad
    # Sum away prepended axes.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # Sum over axes of extent 1 that were stretched.
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense array plus optional gradient recording."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _lift(value, like: "Tensor") -> "Tensor":
        if isinstance(value, Tensor):
            return value
        return Tensor(np.asarray(value, dtype=like.data.dtype))

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic ------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other, self)
        data = _binary(self, other, np.add)
        return Tensor._result(
            data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._lift(other, self)
        data = _binary(self, other, np.subtract)
        return Tensor._result(
            data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)),
        )

    def __rsub__(self, other):
        return Tensor._lift(other, self) - self

    def __mul__(self, other):
        other = Tensor._lift(other, self)
        data = _binary(self, other, np.multiply)
        return Tensor._result(
            data,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other, self)
        data = _binary(self, other, np.divide)
        return Tensor._result(
            data,
            (self, other),
            lambda g: (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / other.data**2, other.shape),
            ),
        )

    def __rtruediv__(self, other):
        return Tensor._lift(other, self) / self

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ContractError("only scalar exponents are supported")
        data = self.data**p
        return Tensor._result(
            data, (self,), lambda g: (g * p * self.data ** (p - 1),)
        )

    # -- matmul ---------------------------------------------------------------

    def __matmul__(self, other):
        other = Tensor._lift(other, self)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(
                f"matmul requires >=2-D operands, got {self.shape} @ {other.shape}"
            )
        try:
            data = np.matmul(self.data, other.data)
        except ValueError as exc:
            raise ShapeError(f"matmul mismatch {self.shape} @ {other.shape}") from exc

        def backward(g):
            ga = np.matmul(g, np.swapaxes(other.data, -1, -2))
            gb = np.matmul(np.swapaxes(self.data, -1, -2), g)
            return _unbroadcast(ga, self.shape), _unbroadcast(gb, other.shape)

        return Tensor._result(data, (self, other), backward)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            ax = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                g = np.expand_dims(g, ax)
            return (np.broadcast_to(g, self.shape).copy(),)

        return Tensor._result(data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- elementwise nonlinearities ----------------------------------------------

    def exp(self):
        data = np.exp(self.data)
        return Tensor._result(data, (self,), lambda g: (g * data,))

    def log(self):
        return Tensor._result(np.log(self.data), (self,), lambda g: (g / self.data,))

    def sqrt(self):
        data = np.sqrt(self.data)
        return Tensor._result(data, (self,), lambda g: (g / (2.0 * data),))

    def tanh(self):
        data = np.tanh(self.data)
        return Tensor._result(data, (self,), lambda g: (g * (1.0 - data**2),))

    def sigmoid(self):
        data = _sigmoid(self.data)
        return Tensor._result(data, (self,), lambda g: (g * data * (1.0 - data),))

    def silu(self):
        sig = _sigmoid(self.data)
        data = self.data * sig
        return Tensor._result(
            data, (self,), lambda g: (g * sig * (1.0 + self.data * (1.0 - sig)),)
        )

    # -- structure ----------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)
        return Tensor._result(data, (self,), lambda g: (g.reshape(self.shape),))

    def transpose(self, axes):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        data = self.data.transpose(axes)
        return Tensor._result(data, (self,), lambda g: (g.transpose(inv),))

    def swapaxes(self, a, b):
        data = self.data.swapaxes(a, b)
        return Tensor._result(data, (self,), lambda g: (g.swapaxes(a, b),))

    def __getitem__(self, idx):
        data = self.data[idx]

        def backward(g):
            gz = np.zeros_like(self.data)
            np.add.at(gz, idx, g)
            return (gz,)

        return Tensor._result(data, (self,), backward)


def _binary(a: Tensor, b: Tensor, op) -> np.ndarray:
    try:
        return op(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}") from exc


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- composite / fused primitives ---------------------------------------------


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, numerically stabilized."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return Tensor._result(y, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    """log(softmax(x)) over the last axis, numerically stabilized."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def backward(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return Tensor._result(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with optional affine parameters."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = xc * istd
    out = xhat
    parents = [x]
    if gain is not None:
        out = out * gain.data
        parents.append(gain)
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        dxhat = g * gain.data if gain is not None else g
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = istd * (dxhat - m1 - xhat * m2)
        grads = [dx]
        if gain is not None:
            grads.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return Tensor._result(out, parents, backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate tensors along an axis."""
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(data, tensors, backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` with scatter-add backward into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"embedding ids out of range [0, {table.shape[0]}): "
            f"[{ids.min()}, {ids.max()}]"
        )
    data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor._result(data, (table,), backward)


# -- backward pass ---------------------------------------------------------------


def backward(loss: Tensor) -> dict:
    """Run reverse-mode differentiation from a scalar loss.

    Populates ``.grad`` (accumulating) on every reachable tensor with
    ``requires_grad`` and returns a map ``id(tensor) -> gradient array``
    covering those tensors.  Raises ContractError for non-scalar losses.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}

    # Iterative postorder over the recording; parent tuples give a fixed
    # deterministic traversal and accumulation order.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.data, dtype=loss.data.dtype)
    }
    leaf_grads: dict[int, np.ndarray] = {}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # Leaf parameter.
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            leaf_grads[id(node)] = node.grad
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    return leaf_grads


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# -- finite-difference gradient checking ------------------------------------------


def grad_check(
    f: Callable[..., Tensor],
    points,
    h_scale: float | None = None,
) -> float:
    """Max relative error between reverse-mode and central finite differences.

    ``f`` maps one or more Tensors to a scalar Tensor.  ``points`` is one
    ndarray or a sequence of ndarrays (evaluation point per argument).  The
    step is h = cbrt(machine eps) * max(1, |x_i|) per coordinate; errors are
    measured as |a - b| / max(1, |a|, |b|).
    """
    single = isinstance(points, np.ndarray)
    pts = [points] if single else list(points)
    pts = [np.asarray(p, dtype=np.float64) for p in pts]

    tensors = [Tensor(p.copy(), requires_grad=True) for p in pts]
    loss = f(*tensors)
    backward(loss)
    analytic = [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    base_h = h_scale if h_scale is not None else float(np.cbrt(np.finfo(np.float64).eps))

    def eval_at(arrays) -> float:
        return float(f(*[Tensor(a) for a in arrays]).data)

    max_err = 0.0
    for k, p in enumerate(pts):
        flat = p.ravel()
        g_flat = analytic[k].ravel()
        for i in range(flat.size):
            h = base_h * max(1.0, abs(flat[i]))
            bumped = [q.copy() for q in pts]
            bumped[k] = bumped[k].copy()
            bumped[k].ravel()[i] = flat[i] + h
            up = eval_at(bumped)
            bumped[k].ravel()[i] = flat[i] - h
            down = eval_at(bumped)
            fd = (up - down) / (2.0 * h)
            a = float(g_flat[i])
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            max_err = max(max_err, err)
    return max_err

"""Small reverse-mode autodiff over float64 numpy arrays.

Every operation records its parents and a closure that pushes the output
gradient back to them.  Broadcasting is deliberately limited to row-wise
bias addition and scalar (0-d) operands so that each backward rule stays
easy to audit.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


_CHECKED = True


def set_checked(flag: bool) -> None:
    """Toggle the finite-value check performed when tensors are created."""
    global _CHECKED
    _CHECKED = bool(flag)


def is_checked() -> bool:
    return _CHECKED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable[[np.ndarray], None] | None = None, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if _CHECKED and not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains NaN or Inf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

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
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (),
                  _backward=backward if req else None)


# ---------------------------------------------------------------- arithmetic

def _binary_shapes(a: Tensor, b: Tensor, allow_row_bias: bool) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "scalar"
    if allow_row_bias and b.ndim == 1 and a.ndim == 2 and a.shape[1] == b.shape[0]:
        return "row"
    raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 and b.ndim > 0:
        a, b = b, a
    kind = _binary_shapes(a, b, allow_row_bias=True)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            if kind == "same":
                b._accumulate(g)
            elif kind == "row":
                b._accumulate(g.sum(axis=0))
            else:
                b._accumulate(np.asarray(g.sum()))

    return _node(out, (a, b), backward)


def sub(a, b) -> Tensor:
    return add(a, mul(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 and b.ndim > 0:
        a, b = b, a
    kind = _binary_shapes(a, b, allow_row_bias=False)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            gb = g * a.data
            b._accumulate(gb if kind == "same" else np.asarray(gb.sum()))

    return _node(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _binary_shapes(a, b, allow_row_bias=False)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / b.data)
        if b.requires_grad:
            gb = -g * a.data / (b.data * b.data)
            b._accumulate(gb if kind == "same" else np.asarray(gb.sum()))

    return _node(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if b.ndim == 1:
            if a.requires_grad:
                a._accumulate(np.outer(g, b.data))
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
            return
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError("transpose expects a matrix")

    def backward(g):
        a._accumulate(g.T)

    return _node(a.data.T.copy(), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    if out.size != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _node(out.copy(), (a,), backward)


def take(a: Tensor, index) -> Tensor:
    """Numpy-style indexing; repeated indices accumulate their gradients."""
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accumulate(full)

    return _node(np.array(out, dtype=np.float64), (a,), backward)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of nothing")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        for p, chunk in zip(parts, np.split(g, sizes, axis=axis)):
            if p.requires_grad:
                p._accumulate(chunk)

    return _node(out, parts, backward)


def repeat_rows(v: Tensor, n: int) -> Tensor:
    """Stack a vector ``n`` times into an (n, len(v)) matrix."""
    if v.ndim != 1:
        raise DimensionError("repeat_rows expects a vector")

    def backward(g):
        v._accumulate(g.sum(axis=0))

    return _node(np.tile(v.data, (n, 1)), (v,), backward)


def repeat_cols(v: Tensor, n: int) -> Tensor:
    """Broadcast a vector into an (len(v), n) matrix, constant along each row."""
    if v.ndim != 1:
        raise DimensionError("repeat_cols expects a vector")

    def backward(g):
        v._accumulate(g.sum(axis=1))

    return _node(np.repeat(v.data[:, None], n, axis=1), (v,), backward)


def sum_(a: Tensor, axis=None) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            a._accumulate(np.full(a.shape, float(g)))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _node(out, (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def segment_max(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Column-wise max over row groups; ``segments[i]`` names the group of row i.

    The gradient goes to the first row attaining each maximum.
    """
    segments = np.asarray(segments, dtype=np.int64)
    if a.ndim != 2 or segments.shape != (a.shape[0],):
        raise DimensionError("segment_max expects a matrix and one id per row")
    if n_segments and np.setdiff1d(np.arange(n_segments), segments).size:
        raise ContractError("every segment needs at least one row")
    order = np.argsort(segments, kind="stable")
    starts = np.searchsorted(segments[order], np.arange(n_segments))
    sorted_rows = a.data[order]
    out = np.maximum.reduceat(sorted_rows, starts, axis=0) if n_segments else np.zeros((0, a.shape[1]))
    # first row (in original order) reaching the max of its segment, per column
    winners = np.empty((n_segments, a.shape[1]), dtype=np.int64)
    hit = sorted_rows == out[segments[order]]
    for s in range(n_segments):
        lo = starts[s]
        hi = starts[s + 1] if s + 1 < n_segments else len(order)
        winners[s] = order[lo + np.argmax(hit[lo:hi], axis=0)]

    def backward(g):
        full = np.zeros_like(a.data)
        cols = np.broadcast_to(np.arange(a.shape[1]), winners.shape)
        np.add.at(full, (winners, cols), g)
        a._accumulate(full)

    return _node(out, (a,), backward)


# ---------------------------------------------------------------- elementwise

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _node(a.data * mask, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return _node(out, (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return _node(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out)

    return _node(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ContractError("log of a non-positive value")

    def backward(g):
        a._accumulate(g / a.data)

    return _node(np.log(a.data), (a,), backward)


def huber(a: Tensor, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty of the residual ``a``."""
    x = a.data
    small = np.abs(x) <= delta
    out = np.where(small, 0.5 * x * x, delta * (np.abs(x) - 0.5 * delta))

    def backward(g):
        a._accumulate(g * np.where(small, x, delta * np.sign(x)))

    return _node(out, (a,), backward)


# ---------------------------------------------------------------- row softmax

def _as_rows(x: np.ndarray) -> np.ndarray:
    return x[None, :] if x.ndim == 1 else x


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis of a vector or matrix."""
    a = as_tensor(a)
    if a.ndim not in (1, 2) or a.shape[-1] == 0 or (a.ndim == 2 and a.shape[0] == 0):
        raise DimensionError(f"softmax needs a non-empty vector or matrix, got {a.shape}")
    x = _as_rows(a.data)
    z = np.exp(x - x.max(axis=1, keepdims=True))
    s = z / z.sum(axis=1, keepdims=True)
    out = s.reshape(a.shape)

    def backward(g):
        gr = _as_rows(g)
        dot = (gr * s).sum(axis=1, keepdims=True)
        a._accumulate((s * (gr - dot)).reshape(a.shape))

    return _node(out, (a,), backward)


def log_softmax_rows(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim not in (1, 2) or a.shape[-1] == 0:
        raise DimensionError(f"log-softmax needs a non-empty vector or matrix, got {a.shape}")
    x = _as_rows(a.data)
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = (shifted - lse).reshape(a.shape)
    s = np.exp(shifted - lse)

    def backward(g):
        gr = _as_rows(g)
        a._accumulate((gr - s * gr.sum(axis=1, keepdims=True)).reshape(a.shape))

    return _node(out, (a,), backward)


# ---------------------------------------------------------------- backward pass

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones(loss.shape)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node.grad = None  # free intermediate buffers

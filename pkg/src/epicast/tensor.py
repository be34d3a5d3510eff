"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps an ndarray and, when it participates in a differentiable
computation, remembers how to push gradients back to its inputs.  Calling
``backward()`` on a scalar walks the recorded graph in reverse topological
order and accumulates ``grad`` on every tensor that requires it.  Parameters
are tensors with a name and a ``frozen`` flag: frozen parameters still
receive gradients (so gradients can flow *through* a frozen backbone) but
optimizers must never update them.
"""

from __future__ import annotations

import math

import numpy as np


class AutodiffError(RuntimeError):
    """Misuse of the tape: backward on a non-scalar, repeated backward, etc."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # sum away prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were broadcast from size 1
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._prev: tuple = ()
        self._backward = None
        self._backward_done = False

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _result(cls, data: np.ndarray, prev: tuple, backward) -> "Tensor":
        """Interior node; skips the finiteness scan done for leaf tensors."""
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in prev)
        out.grad = np.zeros_like(data) if out.requires_grad else None
        out._backward_done = False
        if out.requires_grad:
            out._prev = prev
            out._backward = backward
        else:
            out._prev = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    # -- backward pass --------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(x) into x.grad for every reachable tensor x."""
        if self.data.size != 1:
            raise AutodiffError(f"backward requires a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise AutodiffError("backward on a tensor with no recorded inputs")
        if self._backward_done:
            raise AutodiffError("backward already ran on this tensor; rebuild the graph")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if child.requires_grad and id(child) not in visited:
                    stack.append((child, False))
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
        self._backward_done = True

    # -- operator sugar ---------------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Parameter(Tensor):
    """Named trainable tensor; frozen parameters are never updated in place."""

    __slots__ = ("name", "frozen")

    def __init__(self, data, name: str, frozen: bool = False):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.frozen = bool(frozen)

    def __repr__(self):
        tag = "frozen" if self.frozen else "trainable"
        return f"Parameter({self.name!r}, shape={self.data.shape}, {tag})"


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    """Non-differentiable tensor that skips the finiteness scan.

    Exists for additive attention masks, which legitimately hold -inf.
    """
    return Tensor._result(np.asarray(data, dtype=np.float64), (), None)


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = Tensor._result(a.data + b.data, (a, b), None)

    def _bw():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad, b.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = Tensor._result(a.data - b.data, (a, b), None)

    def _bw():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(out.grad, b.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    """Elementwise (and scalar) multiply with numpy broadcasting."""
    a, b = astensor(a), astensor(b)
    out = Tensor._result(a.data * b.data, (a, b), None)

    def _bw():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad * a.data, b.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = Tensor._result(a.data / b.data, (a, b), None)

    def _bw():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad / b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def square(a) -> Tensor:
    a = astensor(a)
    out = Tensor._result(a.data * a.data, (a,), None)

    def _bw():
        if a.requires_grad:
            a.grad += 2.0 * a.data * out.grad

    out._backward = _bw if out.requires_grad else None
    return out


def sqrt(a) -> Tensor:
    a = astensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative input")
    root = np.sqrt(a.data)
    out = Tensor._result(root, (a,), None)

    def _bw():
        if a.requires_grad:
            a.grad += out.grad / (2.0 * root)

    out._backward = _bw if out.requires_grad else None
    return out


# -- matrix ops ------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.data.ndim < 1 or b.data.ndim < 1:
        raise ValueError("matmul requires at least 1-d operands")
    out = Tensor._result(a.data @ b.data, (a, b), None)

    def _bw():
        if a.requires_grad:
            ga = out.grad @ np.swapaxes(b.data, -1, -2)
            a.grad += _unbroadcast(ga, a.data.shape)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ out.grad
            b.grad += _unbroadcast(gb, b.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def transpose(a, axes: tuple) -> Tensor:
    a = astensor(a)
    inv = np.argsort(axes)
    out = Tensor._result(np.transpose(a.data, axes), (a,), None)

    def _bw():
        if a.requires_grad:
            a.grad += np.transpose(out.grad, inv)

    out._backward = _bw if out.requires_grad else None
    return out


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    out = Tensor._result(a.data.reshape(shape), (a,), None)

    def _bw():
        if a.requires_grad:
            a.grad += out.grad.reshape(a.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [astensor(t) for t in tensors]
    out = Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bw():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                t.grad += out.grad[tuple(idx)]

    out._backward = _bw if out.requires_grad else None
    return out


def getitem(a, idx) -> Tensor:
    a = astensor(a)
    out = Tensor._result(a.data[idx], (a,), None)

    def _bw():
        if a.requires_grad:
            np.add.at(a.grad, idx, out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


# -- reductions -------------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)

    def _bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        if a.requires_grad:
            a.grad += np.broadcast_to(g, a.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = Tensor._result(a.data.mean(axis=axis, keepdims=keepdims), (a,), None)
    count = a.data.size / out.data.size

    def _bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        if a.requires_grad:
            a.grad += np.broadcast_to(g, a.data.shape) / count

    out._backward = _bw if out.requires_grad else None
    return out


# -- nonlinearities ----------------------------------------------------------------


def relu(a) -> Tensor:
    a = astensor(a)
    mask = a.data > 0
    out = Tensor._result(np.where(mask, a.data, 0.0), (a,), None)

    def _bw():
        if a.requires_grad:
            a.grad += np.where(mask, out.grad, 0.0)

    out._backward = _bw if out.requires_grad else None
    return out


def sigmoid(a) -> Tensor:
    a = astensor(a)
    # split by sign for overflow-free exponentials
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor._result(s, (a,), None)

    def _bw():
        if a.requires_grad:
            a.grad += out.grad * s * (1.0 - s)

    out._backward = _bw if out.requires_grad else None
    return out


def tanh(a) -> Tensor:
    a = astensor(a)
    t = np.tanh(a.data)
    out = Tensor._result(t, (a,), None)

    def _bw():
        if a.requires_grad:
            a.grad += out.grad * (1.0 - t * t)

    out._backward = _bw if out.requires_grad else None
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Gaussian error linear unit (tanh approximation, smooth everywhere)."""
    a = astensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Tensor._result(0.5 * x * (1.0 + t), (a,), None)

    def _bw():
        if a.requires_grad:
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
            a.grad += out.grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)

    out._backward = _bw if out.requires_grad else None
    return out


def softmax(a) -> Tensor:
    """Softmax along the last axis, stabilized by max subtraction.

    -inf entries (e.g. causal masking) come out as exactly zero weight.
    """
    a = astensor(a)
    x = a.data
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._result(s, (a,), None)

    def _bw():
        if a.requires_grad:
            g = out.grad
            a.grad += (g - (g * s).sum(axis=-1, keepdims=True)) * s

    out._backward = _bw if out.requires_grad else None
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = astensor(x)
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(square(centered), axis=-1, keepdims=True)
    std = sqrt(add(var, eps))
    return add(mul(div(centered, std), gain), bias)

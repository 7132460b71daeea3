"""Minimal reverse-mode automatic differentiation over numpy arrays.

Each op builds a graph node holding a ``_backward`` closure; calling
:meth:`Tensor.backward` runs the closures in reverse topological order and
accumulates gradients.  Broadcasting in elementwise ops is undone by
summing the upstream gradient over the broadcast axes.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_backward", "_prev")

    def __init__(self, data, _prev=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None  # allocated lazily by backward()
        self._backward = None
        self._prev = _prev

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph walk ---------------------------------------------------------

    def backward(self, seed: np.ndarray | None = None) -> None:
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                stack.append((child, False))
        for node in topo:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
        if seed is None:
            seed = np.ones_like(self.data)
        self.grad = self.grad + np.asarray(seed, dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- elementwise --------------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor(self.data + other.data, (self, other))

        def _backward():
            self.grad += _unbroadcast(out.grad, self.data.shape)
            other.grad += _unbroadcast(out.grad, other.data.shape)

        out._backward = _backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data * other.data, (self, other))

        def _backward():
            self.grad += _unbroadcast(out.grad * other.data, self.data.shape)
            other.grad += _unbroadcast(out.grad * self.data, other.data.shape)

        out._backward = _backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __truediv__(self, other):
        return self * self._lift(other) ** -1.0

    def __rtruediv__(self, other):
        return self._lift(other) * self ** -1.0

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, (self,))

        def _backward():
            self.grad += out.grad * exponent * self.data ** (exponent - 1.0)

        out._backward = _backward
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), (self,))

        def _backward():
            self.grad += out.grad * out.data

        out._backward = _backward
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))

        def _backward():
            self.grad += out.grad / self.data

        out._backward = _backward
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), (self,))

        def _backward():
            self.grad += out.grad * (1.0 - out.data * out.data)

        out._backward = _backward
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), (self,))

        def _backward():
            self.grad += out.grad * (self.data > 0.0)

        out._backward = _backward
        return out

    # -- linear algebra and shape -------------------------------------------

    def __matmul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data @ other.data, (self, other))

        def _backward():
            self.grad += out.grad @ other.data.T
            other.grad += self.data.T @ out.grad

        out._backward = _backward
        return out

    @property
    def T(self):
        out = Tensor(self.data.T, (self,))

        def _backward():
            self.grad += out.grad.T

        out._backward = _backward
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.grad += np.broadcast_to(g, self.data.shape)

        out._backward = _backward
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def take_rows(self, index: np.ndarray):
        index = np.asarray(index, dtype=np.int64)
        out = Tensor(self.data[index], (self,))

        def _backward():
            np.add.at(self.grad, index, out.grad)

        out._backward = _backward
        return out

    def slice_cols(self, start: int, stop: int):
        out = Tensor(self.data[:, start:stop], (self,))

        def _backward():
            self.grad[:, start:stop] += out.grad

        out._backward = _backward
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))

        def _backward():
            self.grad += out.grad.reshape(self.data.shape)

        out._backward = _backward
        return out


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def _backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(int(lo), int(hi))
            t.grad += out.grad[tuple(sl)]

    out._backward = _backward
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row softmax; the shift by the (detached) row max only aids stability."""
    shifted = x - Tensor(x.data.max(axis=1, keepdims=True))
    e = shifted.exp()
    return e / e.sum(axis=1, keepdims=True)


def gradcheck(fn, tensors: list[Tensor], h: float = 1e-6, seed: int = 0) -> float:
    """Max relative error of analytic vs central finite-difference gradients.

    ``fn`` maps the tensors to a scalar Tensor; every tensor is rebuilt
    fresh per evaluation so graphs do not leak between probes.
    """
    out = fn(*tensors)
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    out.backward()
    worst = 0.0
    denom = 1e-8
    for t in tensors:
        flat = t.data.reshape(-1)
        an = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(fn(*tensors).data)
            flat[i] = orig - h
            lo = float(fn(*tensors).data)
            flat[i] = orig
            fd = (hi - lo) / (2.0 * h)
            worst = max(worst, abs(fd - an[i]))
            denom = max(denom, abs(fd), abs(an[i]))
    return worst / denom

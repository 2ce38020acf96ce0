"""Reverse-mode autodiff on numpy arrays, sized for small CNN training."""

from __future__ import annotations

import numpy as np


class Tensor:
    """A node in the computation graph wrapping an ndarray.

    Gradients accumulate into .grad during backward(). The graph is built
    eagerly by the op functions in ops.py and discarded after one backward
    pass; there is no higher-order differentiation.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    # Minimal arithmetic, enough to combine losses.
    def __add__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=self.dtype))
        out = Tensor(self.data + other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self.accumulate(g)
            if other.requires_grad:
                other.accumulate(g)

        out._backward = backward
        return out

    def __mul__(self, scalar: float):
        s = self.dtype.type(scalar)
        out = Tensor(self.data * s, parents=(self,))

        def backward(g):
            if self.requires_grad:
                self.accumulate(g * s)

        out._backward = backward
        return out

    __rmul__ = __mul__

    def reshape(self, *shape):
        orig = self.data.shape
        out = Tensor(self.data.reshape(*shape), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self.accumulate(g.reshape(orig))

        out._backward = backward
        return out

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


class BufferPool:
    """Reusable scratch arrays keyed by (shape, dtype).

    Convolution im2col buffers dominate the engine's memory traffic; reusing
    them keeps addresses stable across training iterations. acquire() marks a
    buffer busy until release(), so a buffer held for the backward pass is
    never handed out twice.
    """

    def __init__(self):
        self._free: dict[tuple, list[np.ndarray]] = {}

    def acquire(self, shape, dtype) -> np.ndarray:
        key = (tuple(shape), np.dtype(dtype))
        bucket = self._free.get(key)
        if bucket:
            return bucket.pop()
        return np.empty(shape, dtype=dtype)

    def release(self, arr: np.ndarray) -> None:
        key = (arr.shape, arr.dtype)
        self._free.setdefault(key, []).append(arr)


POOL = BufferPool()

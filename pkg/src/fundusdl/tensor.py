"""Tensor type and reverse-mode autodiff tape.

A Tensor wraps a row-major numpy array (float32 by default, float64 allowed
for high-precision checks) plus an optional gradient buffer. Layer ops in
fundusdl.nn record a closure on each output tensor; Tensor.backward() walks
the recorded graph in reverse topological order and accumulates gradients
into every tensor that requires them.

Tensors are treated as immutable once produced by an op; only optimizer
steps mutate parameter data in place.
"""

from contextlib import contextmanager

import numpy as np

from .errors import FundusDLError

DTYPE = np.float32

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """N-dimensional array with optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=DTYPE, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def from_op(data, parents, backward, op):
        """Wrap an op result; records the tape only while grads are enabled."""
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        return out

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, op={self.op})"

    # -- gradient machinery ---------------------------------------------------

    def accumulate_grad(self, g):
        """Add g into this tensor's grad buffer (allocating on first use)."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from this (scalar) tensor through the recorded graph."""
        if self.data.size != 1:
            raise FundusDLError(
                f"backward() requires a scalar tensor, got shape {self.data.shape}"
            )
        if self._backward is None and not self._parents and not self.requires_grad:
            raise FundusDLError("backward() called before any forward pass was recorded")

        order = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

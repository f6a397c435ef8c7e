"""Tensor and tape for reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import threading

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on this thread (inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    """One recorded operation: its inputs and the vector-Jacobian product.

    The node never references its own output tensor, so dropping the output
    frees the whole graph by reference counting.
    """

    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op, inputs, vjp):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp

    def __repr__(self):
        return f"Node({self.op})"


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        Tape.from_output(self).backward(self, grad)

    def __add__(self, other):
        from .ops import add

        return add(self, other)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def record(data, inputs, op, vjp):
    """Wrap an op result, attaching a tape node when any input needs gradients."""
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, tuple(inputs), vjp)
    return out


class Tape:
    """Operations reachable from an output, in topological (execution) order."""

    def __init__(self, ops):
        self.ops = ops

    def __len__(self):
        return len(self.ops)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order = []
        seen = set()
        if out._node is None:
            return cls(order)
        stack = [(out._node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for t in node.inputs:
                if t._node is not None and id(t._node) not in seen:
                    stack.append((t._node, False))
        return cls(order)

    def backward(self, out: Tensor, grad=None):
        if grad is None:
            if out.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(out.data)
        grad = np.asarray(grad, dtype=out.dtype)
        if out._node is None:
            if out.requires_grad:
                out.grad = grad if out.grad is None else out.grad + grad
            return
        node_grads = {id(out._node): grad}
        leaf_grads = {}
        leaves = {}
        for node in reversed(self.ops):
            g = node_grads.pop(id(node), None)
            if g is None:
                continue
            input_grads = node.vjp(g)
            for t, gi in zip(node.inputs, input_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._node is not None:
                    key = id(t._node)
                    node_grads[key] = gi if key not in node_grads else node_grads[key] + gi
                else:
                    key = id(t)
                    leaves[key] = t
                    leaf_grads[key] = gi if key not in leaf_grads else leaf_grads[key] + gi
        for key, g in leaf_grads.items():
            t = leaves[key]
            g = g.astype(t.dtype, copy=False)
            t.grad = g if t.grad is None else t.grad + g

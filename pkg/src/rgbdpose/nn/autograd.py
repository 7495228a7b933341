"""Minimal reverse-mode tape over dense numpy arrays.

Tensors wrap float32 arrays during training and float64 arrays in
gradient-check mode; every operation preserves the dtype of its inputs.
Gradient recording is skipped entirely when no input requires gradients
or inside a ``no_grad`` block, so inference carries no tape overhead.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument

_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED[0]


class Tensor:
    """Dense array node; `parents` and `backward_fn` form the tape."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None


def make_op(data, parents, backward_fn) -> Tensor:
    """Wrap an op result, recording the tape only when gradients flow."""
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward_fn, requires_grad=True)
    return Tensor(data)


def backward(root: Tensor):
    """Accumulate gradients of a scalar `root` into every tape leaf."""
    if root.data.size != 1:
        raise InvalidArgument("backward() expects a scalar tensor")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g

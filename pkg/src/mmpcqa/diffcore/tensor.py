"""Reverse-mode autodiff over dense NumPy arrays.

Each operator builds a node holding its parents and one gradient function per
parent; ``backward`` walks the graph once in reverse topological order.
Training runs in float32, gradient checking in float64 (dtype follows the
arrays you feed in).
"""

import numpy as np

# Debug switch: validate that every operator output is finite.
CHECK_FINITE = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fns")

    def __init__(self, data, parents=(), grad_fns=(), requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = parents
        self._grad_fns = grad_fns
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        if CHECK_FINITE and not np.isfinite(self.data).all():
            raise FloatingPointError("non-finite value in operator output")

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def backward(self, seed=None):
        """Accumulate gradients into every requires_grad node reachable below.

        ``seed`` is dL/d(self); defaults to ones for single-element outputs.
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() needs an explicit seed for "
                                 f"non-scalar output of shape {self.shape}")
            seed = np.ones_like(self.data)
        seed = np.asarray(seed, dtype=self.data.dtype)
        if seed.shape != self.data.shape:
            raise ValueError(f"seed shape {seed.shape} != output shape {self.shape}")

        order = self._toposort()
        self.grad = seed
        for node in order:
            g = node.grad
            if g is None:
                continue
            for parent, fn in zip(node._parents, node._grad_fns):
                if not parent.requires_grad:
                    continue
                contrib = fn(g)
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib

    def _toposort(self):
        """Nodes in an order where every consumer precedes its parents."""
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
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        return list(reversed(order))


def tensor(data, dtype=None, requires_grad=False) -> Tensor:
    """Leaf node constructor."""
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad)

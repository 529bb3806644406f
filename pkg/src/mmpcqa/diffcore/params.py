"""Parameter storage, fan-in initialization and the Adam optimizer."""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class ParamEntry:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


class ParameterStore:
    """Ordered map name -> (value, gradient, Adam moments) plus a step count.

    During a forward pass, ``leaf(name)`` hands out one shared autodiff leaf
    per parameter so gradients from every use accumulate in a single node;
    ``end_tape`` moves them into the store.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._entries: dict[str, ParamEntry] = {}
        self.step = 0
        self._leaves: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        value = np.ascontiguousarray(value, dtype=self.dtype)
        self._entries[name] = ParamEntry(
            value=value, grad=np.zeros_like(value),
            m=np.zeros_like(value), v=np.zeros_like(value))

    def names(self):
        return list(self._entries)

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def entry(self, name: str) -> ParamEntry:
        return self._entries[name]

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value

    # -- tape interface ---------------------------------------------------

    def begin_tape(self) -> None:
        self._leaves = {}

    def leaf(self, name: str) -> Tensor:
        t = self._leaves.get(name)
        if t is None:
            t = Tensor(self._entries[name].value, requires_grad=True)
            self._leaves[name] = t
        return t

    def end_tape(self) -> None:
        for name, t in self._leaves.items():
            if t.grad is not None:
                entry = self._entries[name]
                entry.grad += t.grad.astype(self.dtype, copy=False)
        self._leaves = {}

    def zero_grads(self) -> None:
        for entry in self._entries.values():
            entry.grad[:] = 0

    def clone(self) -> "ParameterStore":
        out = ParameterStore(self.dtype)
        for name, e in self._entries.items():
            out.add(name, e.value.copy())
            oe = out.entry(name)
            oe.grad[:] = e.grad
            oe.m[:] = e.m
            oe.v[:] = e.v
        out.step = self.step
        return out

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore(dtype)
        for name, e in self._entries.items():
            out.add(name, e.value.astype(dtype))
        out.step = self.step
        return out


def init_params(specs, seed: int, dtype=np.float32) -> ParameterStore:
    """Build a store from (name, shape, fan_in) triples.

    Weights (fan_in given) draw from uniform(-sqrt(1/fan_in), +sqrt(1/fan_in));
    biases (fan_in None) start at zero.  Deterministic from seed.
    """
    rng = np.random.default_rng(seed)
    store = ParameterStore(dtype)
    for name, shape, fan_in in specs:
        if fan_in is None:
            value = np.zeros(shape, dtype=np.float64)
        else:
            bound = np.sqrt(1.0 / fan_in)
            value = rng.uniform(-bound, bound, size=shape)
        store.add(name, value.astype(dtype))
    return store


def adam_step(store: ParameterStore, lr: float, betas=(0.9, 0.999),
              eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """Classical Adam with bias correction and coupled (L2) weight decay.

    Gradients are zeroed after the update.
    """
    store.step += 1
    t = store.step
    ty = store.dtype.type
    b1, b2 = ty(betas[0]), ty(betas[1])
    one = ty(1.0)
    lr = ty(lr)
    eps = ty(eps)
    wd = ty(weight_decay)
    bc1 = one - ty(betas[0]) ** t
    bc2 = one - ty(betas[1]) ** t
    for entry in store._entries.values():
        g = entry.grad
        if weight_decay != 0.0:
            g = g + wd * entry.value
        entry.m *= b1
        entry.m += (one - b1) * g
        entry.v *= b2
        entry.v += (one - b2) * (g * g)
        m_hat = entry.m / bc1
        v_hat = entry.v / bc2
        entry.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        entry.grad[:] = 0

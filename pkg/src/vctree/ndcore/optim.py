"""First-order optimizers over a ParamStore.

An optimizer owns a subset of parameter names (default: everything in
the store at step time).  step() refuses to touch anything if any owned
gradient is non-finite, applies the update, then zeroes the gradients it
consumed.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteError
from .params import ParamStore


class _Optimizer:
    def __init__(self, store: ParamStore, names=None):
        self.store = store
        self._names = list(names) if names is not None else None

    def names(self) -> list[str]:
        return self._names if self._names is not None else self.store.names()

    def step(self) -> None:
        names = self.names()
        for n in names:
            g = self.store.get(n).grad
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter '{n}'")
        self._update(names)
        self.store.zero_grad(names)

    def _update(self, names):
        raise NotImplementedError


class SgdMomentum(_Optimizer):
    def __init__(self, store, lr: float, momentum: float = 0.9, names=None):
        super().__init__(store, names)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity: dict[str, np.ndarray] = {}

    def _update(self, names):
        for n in names:
            p = self.store.get(n)
            v = self._velocity.get(n)
            if v is None:
                v = self._velocity[n] = np.zeros_like(p.data)
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v


class Adam(_Optimizer):
    def __init__(self, store, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, names=None):
        super().__init__(store, names)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def _update(self, names):
        self._t += 1
        b1t = 1.0 - self.beta1 ** self._t
        b2t = 1.0 - self.beta2 ** self._t
        for n in names:
            p = self.store.get(n)
            m = self._m.setdefault(n, np.zeros_like(p.data))
            v = self._v.setdefault(n, np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def make_optimizer(kind: str, store: ParamStore, hyper: dict, names=None) -> _Optimizer:
    if kind == "sgd_momentum":
        return SgdMomentum(store, lr=hyper["lr"], momentum=hyper.get("momentum", 0.9), names=names)
    if kind == "adam":
        return Adam(store, lr=hyper["lr"], beta1=hyper.get("beta1", 0.9),
                    beta2=hyper.get("beta2", 0.999), eps=hyper.get("eps", 1e-8), names=names)
    raise ValueError(f"unknown optimizer kind '{kind}'")


def clip_grad_inf(store: ParamStore, names, max_norm: float) -> float:
    """Scale the listed gradients so their joint infinity norm is <= max_norm.

    Returns the pre-clip norm.
    """
    norm = 0.0
    for n in names:
        g = store.get(n).grad
        if g.size:
            norm = max(norm, float(np.max(np.abs(g))))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for n in names:
            store.get(n).grad *= scale
    return norm

"""Central finite-difference verification of the reverse pass.

The forward under test must be a pure deterministic function of the
store contents; the checker perturbs one parameter entry at a time and
compares (L(p+h) - L(p-h)) / 2h against the recorded gradient.
"""

from __future__ import annotations

import numpy as np

from .params import ParamStore
from .tensor import Tensor, backward, no_grad


def finite_difference_check(loss_fn, store: ParamStore, names=None,
                            h: float = 1e-5) -> float:
    """Return the worst relative error between reverse-mode and FD grads."""
    names = list(names) if names is not None else store.names()
    store.zero_grad()
    loss = loss_fn()
    if not isinstance(loss, Tensor):
        raise TypeError("loss_fn must return a Tensor")
    backward(loss)
    analytic = {n: store.get(n).grad.copy() for n in names}
    worst = 0.0
    with no_grad():
        for n in names:
            flat = store.get(n).data.reshape(-1)
            an_flat = analytic[n].reshape(-1)
            for k in range(flat.size):
                saved = flat[k]
                flat[k] = saved + h
                lo_hi = loss_fn().item()
                flat[k] = saved - h
                lo_lo = loss_fn().item()
                flat[k] = saved
                fd = (lo_hi - lo_lo) / (2.0 * h)
                an = an_flat[k]
                err = abs(fd - an) / max(1e-6, abs(fd) + abs(an))
                worst = max(worst, err)
    store.zero_grad(names)
    return worst


def numeric_gradient(loss_fn, array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of loss_fn() with respect to a raw array in place."""
    out = np.zeros_like(array)
    flat = array.reshape(-1)
    grad = out.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + h
            hi = loss_fn().item()
            flat[k] = saved - h
            lo = loss_fn().item()
            flat[k] = saved
            grad[k] = (hi - lo) / (2.0 * h)
    return out

"""Named parameter storage with seeded initialization.

Parameters are requires_grad leaves created on first request and then
returned unchanged, so a forward pass written as functions of
(store, name) lazily materializes exactly the weights it touches, in a
deterministic order for a deterministic code path.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor


class ParamStore:
    def __init__(self, seed: int = 0, dtype=np.float64):
        self.rng_seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.rng = np.random.Generator(np.random.PCG64(self.rng_seed))
        self._entries: dict[str, Tensor] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def get(self, name: str) -> Tensor:
        return self._entries[name]

    def param(self, name: str, shape, init: str = "fan_in") -> Tensor:
        """Fetch the named parameter, creating it on first use.

        init "fan_in" draws uniform(-1/sqrt(k), 1/sqrt(k)) with k the
        trailing dimension; "zeros" is used for biases and for weights a
        caller wants to start neutral.
        """
        shape = tuple(int(s) for s in shape)
        if name in self._entries:
            p = self._entries[name]
            if p.data.shape != shape:
                raise DimensionError(
                    f"param '{name}': requested shape {shape} but stored shape is {p.data.shape}")
            return p
        if init == "zeros":
            values = np.zeros(shape, dtype=self.dtype)
        elif init == "fan_in":
            bound = 1.0 / np.sqrt(shape[-1]) if shape else 1.0
            values = self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        else:
            raise ValueError(f"unknown init '{init}'")
        t = Tensor(values, requires_grad=True)
        self._entries[name] = t
        return t

    def set_value(self, name: str, values) -> None:
        p = self._entries[name]
        arr = np.asarray(values, dtype=self.dtype)
        if arr.shape != p.data.shape:
            raise DimensionError(
                f"param '{name}': assigned shape {arr.shape} but stored shape is {p.data.shape}")
        p.data[...] = arr

    def zero_grad(self, names=None) -> None:
        for name in (names if names is not None else self._entries):
            self._entries[name].grad.fill(0.0)

    def select(self, prefix: str) -> list[str]:
        """Names under a dotted prefix, e.g. select("score") -> score.*"""
        dotted = prefix if prefix.endswith(".") else prefix + "."
        return [n for n in self._entries if n.startswith(dotted) or n == prefix]

    def snapshot(self, names=None) -> dict[str, bytes]:
        """Value bytes per parameter, for bit-exact freeze checks."""
        return {n: self._entries[n].data.tobytes()
                for n in (names if names is not None else self._entries)}

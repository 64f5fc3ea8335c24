"""Reverse-mode automatic differentiation over dense numpy arrays.

Every op returns a Tensor node holding its value plus enough of the
producing operation (parents and a local vjp closure) to run reverse
accumulation later.  backward() walks the recorded graph once, in
topological order, and adds gradients into the leaves that asked for
them.  All arithmetic is plain numpy, so identical inputs give
bit-identical outputs and gradients.

Scalars are 0-d arrays.  Broadcasting is deliberately not supported
except where a listed op needs it (bias over rows).
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from ..errors import DimensionError, EmptyTapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run forwards without recording; values are unchanged, just cheaper."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        # Leaves that want gradients keep a persistent accumulator; the
        # caller zeroes it, backward() only ever adds.
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- conveniences ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def sum(self) -> "Tensor":
        return tsum(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tracked={self._backward is not None})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_const(self, -float(other))

    def __rsub__(self, other):
        return add_const(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_const(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(_tracked(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not match")


# -- elementwise -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def add_const(a: Tensor, c: float) -> Tensor:
    return _make(a.data + c, (a,), lambda g: (g,))


def mul_const(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return mul_const(a, -1.0)


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so no overflow on either tail
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


# -- contractions and reshaping --------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul: shapes {ad.shape} and {bd.shape} do not align")
        return _make(ad @ bd, (a, b), lambda g: (np.outer(g, bd), ad.T @ g))
    if ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise DimensionError(f"matmul: shapes {ad.shape} and {bd.shape} do not align")
        return _make(ad @ bd, (a, b), lambda g: (bd @ g, np.outer(ad, g)))
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul: shapes {ad.shape} and {bd.shape} do not align")
        return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    raise DimensionError(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")


def tsum(a: Tensor) -> Tensor:
    return _make(np.asarray(np.sum(a.data)), (a,), lambda g: (g * np.ones_like(a.data),))


def mean(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise DimensionError("mean: empty tensor")
    return mul_const(tsum(a), 1.0 / a.data.size)


def concat(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat: no tensors given")
    for p in parts:
        if p.data.ndim != 1:
            raise DimensionError(f"concat: expected 1-d parts, got shape {p.data.shape}")
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        return tuple(g[offsets[k]:offsets[k + 1]] for k in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts]), tuple(parts), back)


def stack_rows(rows: list[Tensor]) -> Tensor:
    if not rows:
        raise DimensionError("stack_rows: no tensors given")
    width = rows[0].data.shape
    for r in rows:
        if r.data.ndim != 1 or r.data.shape != width:
            raise DimensionError(f"stack_rows: expected 1-d rows of shape {width}, got {r.data.shape}")
    return _make(np.stack([r.data for r in rows]), tuple(rows),
                 lambda g: tuple(g[k] for k in range(len(rows))))


def take(a: Tensor, indices) -> Tensor:
    if a.data.ndim != 1:
        raise DimensionError(f"take: expected a 1-d tensor, got shape {a.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), back)


def pick(a: Tensor, index: int) -> Tensor:
    if a.data.ndim != 1:
        raise DimensionError(f"pick: expected a 1-d tensor, got shape {a.data.shape}")
    i = int(index)

    def back(g):
        out = np.zeros_like(a.data)
        out[i] = g
        return (out,)

    return _make(np.asarray(a.data[i]), (a,), back)


def row(a: Tensor, index: int) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"row: expected a 2-d tensor, got shape {a.data.shape}")
    i = int(index)

    def back(g):
        out = np.zeros_like(a.data)
        out[i, :] = g
        return (out,)

    return _make(a.data[i].copy(), (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Add a 1-d vector to every row of a 2-d tensor."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.data.shape[1] != v.data.shape[0]:
        raise DimensionError(f"add_rowvec: shapes {x.data.shape} and {v.data.shape} do not align")
    return _make(x.data + v.data, (x, v), lambda g: (g, g.sum(axis=0)))


# -- normalizers and losses ------------------------------------------------


def softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 1:
        raise DimensionError(f"softmax: expected a 1-d tensor, got shape {a.data.shape}")
    shifted = a.data - np.max(a.data)
    e = np.exp(shifted)
    out = e / np.sum(e)
    return _make(out, (a,), lambda g: (out * (g - np.dot(g, out)),))


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 1:
        raise DimensionError(f"log_softmax: expected a 1-d tensor, got shape {a.data.shape}")
    shifted = a.data - np.max(a.data)
    lse = math.log(np.sum(np.exp(shifted)))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * np.sum(g),))


def binary_cross_entropy_with_logits(z: Tensor, targets) -> Tensor:
    """Mean of elementwise BCE between sigmoid(z) and fixed targets in [0, 1].

    Computed in log space so large logits stay finite.
    """
    t = np.asarray(targets, dtype=z.data.dtype)
    if t.shape != z.data.shape:
        raise DimensionError(f"bce: shapes {z.data.shape} and {t.shape} do not match")
    if z.data.size == 0:
        raise DimensionError("bce: empty input")
    zd = z.data
    per = np.maximum(zd, 0.0) - zd * t + np.log1p(np.exp(-np.abs(zd)))
    n = zd.size

    def back(g):
        return (g * (_sigmoid(zd) - t) / n,)

    return _make(np.asarray(np.mean(per)), (z,), back)


# -- reverse pass ----------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative: training graphs get deep enough to overrun the recursion limit.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf under loss."""
    if loss.data.shape != ():
        raise DimensionError(f"backward: loss must be a scalar, got shape {loss.data.shape}")
    if loss._backward is None and not loss._parents:
        raise EmptyTapeError("backward: no recorded operations produced this value")
    order = _toposort(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad += g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not _tracked(parent):
                continue
            held = pending.get(id(parent))
            pending[id(parent)] = pg if held is None else held + pg

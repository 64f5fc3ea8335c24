"""Layer primitives: affine maps, MLP stacks, LSTM and GRU cells, losses.

Each takes a ParamStore plus a dotted name prefix and materializes its
weights on first call, sized from the inputs it is given.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .params import ParamStore
from .tensor import (Tensor, add, add_rowvec, concat, log_softmax, matmul, mul,
                     neg, pick, relu, sigmoid, tanh, tsum)


def linear(W: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """W @ x + b for a single vector, or row-batched when x is 2-d."""
    if W.data.ndim != 2:
        raise DimensionError(f"linear: weight must be 2-d, got shape {W.data.shape}")
    out_dim, in_dim = W.data.shape
    if b.data.shape != (out_dim,):
        raise DimensionError(f"linear: bias shape {b.data.shape} does not match weight shape {W.data.shape}")
    if x.data.ndim == 1:
        if x.data.shape[0] != in_dim:
            raise DimensionError(f"linear: input shape {x.data.shape} does not match weight shape {W.data.shape}")
        return add(matmul(W, x), b)
    if x.data.ndim == 2:
        if x.data.shape[1] != in_dim:
            raise DimensionError(f"linear: input shape {x.data.shape} does not match weight shape {W.data.shape}")
        return add_rowvec(matmul(x, _transpose(W)), b)
    raise DimensionError(f"linear: input must be 1-d or 2-d, got shape {x.data.shape}")


def _transpose(a: Tensor) -> Tensor:
    from .tensor import _make
    return _make(a.data.T, (a,), lambda g: (g.T,))


def dense(store: ParamStore, name: str, x: Tensor, out_dim: int,
          bias: bool = True, init: str = "fan_in") -> Tensor:
    in_dim = x.data.shape[-1]
    W = store.param(f"{name}.W", (out_dim, in_dim), init=init)
    if bias:
        b = store.param(f"{name}.b", (out_dim,), init="zeros")
        return linear(W, x, b)
    out = matmul(W, x) if x.data.ndim == 1 else matmul(x, _transpose(W))
    return out


def mlp(store: ParamStore, name: str, x: Tensor, layer_sizes) -> Tensor:
    """Stacked linear+ReLU with a linear final layer (no activation)."""
    sizes = list(layer_sizes)
    if not sizes:
        raise DimensionError("mlp: layer_sizes must be nonempty")
    if x.data.size == 0:
        raise DimensionError("mlp: empty input")
    h = x
    for k, width in enumerate(sizes):
        h = dense(store, f"{name}.l{k}", h, width)
        if k < len(sizes) - 1:
            h = relu(h)
    return h


def lstm_cell(store: ParamStore, name: str, z: Tensor, h_prev: Tensor,
              c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One step of a standard LSTM: returns (h, c)."""
    hidden = h_prev.data.shape[0]
    if c_prev.data.shape != (hidden,):
        raise DimensionError(f"lstm_cell: state shapes {h_prev.data.shape} and {c_prev.data.shape} do not match")
    d = z.data.shape[0]

    def gate(tag):
        W = store.param(f"{name}.W_{tag}", (hidden, d))
        U = store.param(f"{name}.U_{tag}", (hidden, hidden))
        b = store.param(f"{name}.b_{tag}", (hidden,), init="zeros")
        return add(add(matmul(W, z), matmul(U, h_prev)), b)

    i = sigmoid(gate("i"))
    f = sigmoid(gate("f"))
    o = sigmoid(gate("o"))
    u = tanh(gate("u"))
    c = add(mul(i, u), mul(f, c_prev))
    h = mul(o, tanh(c))
    return h, c


def gru_cell(store: ParamStore, name: str, z: Tensor, h_prev: Tensor) -> Tensor:
    """One step of a standard GRU: returns the new hidden state."""
    hidden = h_prev.data.shape[0]
    d = z.data.shape[0]

    def pre(tag):
        W = store.param(f"{name}.W_{tag}", (hidden, d))
        U = store.param(f"{name}.U_{tag}", (hidden, hidden))
        b = store.param(f"{name}.b_{tag}", (hidden,), init="zeros")
        return W, U, b

    Wr, Ur, br = pre("r")
    r = sigmoid(add(add(matmul(Wr, z), matmul(Ur, h_prev)), br))
    Wz, Uz, bz = pre("z")
    zg = sigmoid(add(add(matmul(Wz, z), matmul(Uz, h_prev)), bz))
    Wn, Un, bn = pre("n")
    n = tanh(add(add(matmul(Wn, z), mul(r, matmul(Un, h_prev))), bn))
    return add(mul(1.0 - zg, n), mul(zg, h_prev))


def soft_cross_entropy(logits: Tensor, target_probs) -> Tensor:
    """-sum_a t_a log softmax(logits)_a for a fixed target distribution."""
    t = np.asarray(target_probs, dtype=logits.data.dtype)
    if t.shape != logits.data.shape:
        raise DimensionError(f"soft_cross_entropy: shapes {logits.data.shape} and {t.shape} do not match")
    weighted = mul(log_softmax(logits), Tensor(t))
    return neg(tsum(weighted))


def cross_entropy_index(logits: Tensor, index: int) -> Tensor:
    """-log softmax(logits)[index]."""
    return neg(pick(log_softmax(logits), index))

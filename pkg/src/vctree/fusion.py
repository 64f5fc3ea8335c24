"""Multimodal fusion of a visual vector with a task vector.

fuse(x, y) = ReLU(Ax + By) - (Ax - By)^2, the additive-plus-difference
form used both by the attention heads and by the task-dependency gate of
the pair scorer.  A and B are bias-free projections into a shared width.
"""

from __future__ import annotations

from .errors import DimensionError
from .ndcore import ParamStore, Tensor
from .ndcore.layers import dense
from .ndcore.tensor import add, add_rowvec, mul_const, relu, square, sub


def fuse(store: ParamStore, name: str, x: Tensor, y: Tensor, out_dim: int) -> Tensor:
    """Fused feature of x and y; x may be row-batched, y is a single vector."""
    if y.data.ndim != 1:
        raise DimensionError(f"fuse: task vector must be 1-d, got shape {y.data.shape}")
    a = dense(store, f"{name}.x", x, out_dim, bias=False)
    b = dense(store, f"{name}.y", y, out_dim, bias=False)
    if a.data.ndim == 2:
        total = add_rowvec(a, b)
        diff = add_rowvec(a, mul_const(b, -1.0))
    else:
        total = add(a, b)
        diff = sub(a, b)
    return sub(relu(total), square(diff))

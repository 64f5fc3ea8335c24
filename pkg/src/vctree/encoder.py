"""Context encoding over a tree: bidirectional TreeLSTM.

Each node ends up with d_i = [top-down state; bottom-up state].  The
bottom-up pass over binary trees keeps two separately parameterized
forget gates fed by the concatenated child states; over multi-branch
trees a child-mean variant averages child states and normalizes the
forgotten memory sum by the child count.  The top-down pass is one
shared standard LSTM stepping from parent to child.  All traversals are
iterative with explicit stacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .ndcore import ParamStore, Tensor
from .ndcore.layers import lstm_cell
from .ndcore.tensor import add, concat, matmul, mul, mul_const, sigmoid, tanh
from .treebuild import BinaryTree, MultiBranchTree


@dataclass
class NodeStates:
    h: list          # per node, Tensor (hidden,)
    c: list
    direction: str   # "up" or "down"


# -- traversal order -------------------------------------------------------


def postorder(tree) -> list:
    """Children strictly before parents, subtrees in child order."""
    order = []
    stack = [(tree.root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        stack.append((node, True))
        for c in reversed(tree.children_of(node)):
            stack.append((c, False))
    return order


def preorder(tree) -> list:
    """Parents strictly before children, subtrees in child order."""
    order = []
    stack = [tree.root]
    while stack:
        node = stack.pop()
        order.append(node)
        for c in reversed(tree.children_of(node)):
            stack.append(c)
    return order


# -- cells -----------------------------------------------------------------


def _gate(store, name, tag, z, state, hidden, state_width):
    W = store.param(f"{name}.W_{tag}", (hidden, z.data.shape[0]))
    U = store.param(f"{name}.U_{tag}", (hidden, state_width))
    b = store.param(f"{name}.b_{tag}", (hidden,), init="zeros")
    return add(add(matmul(W, z), matmul(U, state)), b)


def binary_up_cell(store: ParamStore, name: str, z: Tensor,
                   h_left: Tensor, h_right: Tensor,
                   c_left: Tensor, c_right: Tensor) -> tuple[Tensor, Tensor]:
    """Bottom-up step over a binary node.

    Gates read the concatenated child states; the two forget gates have
    their own weights and each protects its own child's memory.  Absent
    children are passed in as zero states by the caller.
    """
    hidden = h_left.data.shape[0]
    pair = concat([h_left, h_right])
    i = sigmoid(_gate(store, name, "i", z, pair, hidden, 2 * hidden))
    f_l = sigmoid(_gate(store, name, "fl", z, pair, hidden, 2 * hidden))
    f_r = sigmoid(_gate(store, name, "fr", z, pair, hidden, 2 * hidden))
    o = sigmoid(_gate(store, name, "o", z, pair, hidden, 2 * hidden))
    u = tanh(_gate(store, name, "u", z, pair, hidden, 2 * hidden))
    c = add(mul(i, u), add(mul(f_l, c_left), mul(f_r, c_right)))
    h = mul(o, tanh(c))
    return h, c


def childmean_up_cell(store: ParamStore, name: str, z: Tensor,
                      child_states: list) -> tuple[Tensor, Tensor]:
    """Bottom-up step over a multi-branch node.

    Child hidden states enter as their mean; one shared forget gate is
    evaluated per child against that child's hidden state, and the
    forgotten memory sum is normalized by the child count.  Leaves see
    zero context.
    """
    hidden = store.get(f"{name}.W_i").data.shape[0] if f"{name}.W_i" in store else None
    if child_states:
        hidden = child_states[0][0].data.shape[0]
    if hidden is None:
        raise DimensionError("childmean_up_cell: hidden size unknown for a leaf before any parameter exists")
    zero = Tensor(np.zeros(hidden))
    if child_states:
        h_mean = child_states[0][0]
        for h_k, _ in child_states[1:]:
            h_mean = add(h_mean, h_k)
        h_mean = mul_const(h_mean, 1.0 / len(child_states))
    else:
        h_mean = zero
    i = sigmoid(_gate(store, name, "i", z, h_mean, hidden, hidden))
    o = sigmoid(_gate(store, name, "o", z, h_mean, hidden, hidden))
    u = tanh(_gate(store, name, "u", z, h_mean, hidden, hidden))
    if child_states:
        kept = None
        for h_k, c_k in child_states:
            f_k = sigmoid(_gate(store, name, "f", z, h_k, hidden, hidden))
            term = mul(f_k, c_k)
            kept = term if kept is None else add(kept, term)
        memory = add(mul(i, u), mul_const(kept, 1.0 / len(child_states)))
    else:
        memory = mul(i, u)
    return mul(o, tanh(memory)), memory


# -- passes ----------------------------------------------------------------


def bottom_up(store: ParamStore, name: str, tree, inputs: list, hidden: int) -> NodeStates:
    """Leaf-to-root pass; the cell is picked by the tree's branching kind."""
    tree.validate()
    n = tree.n
    if len(inputs) != n:
        raise DimensionError(f"bottom_up: {len(inputs)} inputs for a {n}-node tree")
    hs: list = [None] * n
    cs: list = [None] * n
    binary = isinstance(tree, BinaryTree)
    zero = Tensor(np.zeros(hidden))
    for node in postorder(tree):
        if binary:
            l, r = tree.left[node], tree.right[node]
            h_l = hs[l] if l is not None else zero
            c_l = cs[l] if l is not None else zero
            h_r = hs[r] if r is not None else zero
            c_r = cs[r] if r is not None else zero
            # size the gates on first touch
            store.param(f"{name}.W_i", (hidden, inputs[node].data.shape[0]))
            hs[node], cs[node] = binary_up_cell(store, name, inputs[node], h_l, h_r, c_l, c_r)
        else:
            states = [(hs[c], cs[c]) for c in tree.children_of(node)]
            store.param(f"{name}.W_i", (hidden, inputs[node].data.shape[0]))
            hs[node], cs[node] = childmean_up_cell(store, name, inputs[node], states)
    return NodeStates(hs, cs, "up")


def top_down(store: ParamStore, name: str, tree, inputs: list, hidden: int) -> NodeStates:
    """Root-to-leaf pass: one standard LSTM, parameters shared across edges."""
    tree.validate()
    n = tree.n
    if len(inputs) != n:
        raise DimensionError(f"top_down: {len(inputs)} inputs for a {n}-node tree")
    hs: list = [None] * n
    cs: list = [None] * n
    zero = Tensor(np.zeros(hidden))
    for node in preorder(tree):
        p = tree.parent[node]
        h_prev = hs[p] if p is not None else zero
        c_prev = cs[p] if p is not None else zero
        hs[node], cs[node] = lstm_cell(store, name, inputs[node], h_prev, c_prev)
    return NodeStates(hs, cs, "down")


def bitreelstm(store: ParamStore, name: str, tree, inputs: list, hidden: int) -> list:
    """Per-node context d_i = [top-down h_i; bottom-up h_i]."""
    down = top_down(store, f"{name}.down", tree, inputs, hidden)
    up = bottom_up(store, f"{name}.up", tree, inputs, hidden)
    return [concat([down.h[i], up.h[i]]) for i in range(tree.n)]

"""Tree construction over a pairwise score matrix.

The main path grows a maximum spanning tree from the highest-total
node, either greedily or by sampling each attachment in proportion to
its score (leaving behind a trace whose log-probability the policy
gradient differentiates later), then rewrites the multi-branch result
into a binary tree by the left-child right-sibling rule.  Chain and
overlap layouts are kept as structure ablations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import center, iou
from .errors import ValidationError
from .ndcore import Tensor
from .ndcore.tensor import add, add_const, log, pick, tsum
from .scoring import ScoreMatrix


# -- tree types ------------------------------------------------------------


@dataclass
class MultiBranchTree:
    """Rooted tree with ordered child lists; order records attachment order."""
    root: int
    parent: list            # parent[i] is None for the root
    children: list          # children[i] is a list of node ids

    @property
    def n(self) -> int:
        return len(self.parent)

    def children_of(self, i: int) -> list:
        return list(self.children[i])

    def validate(self) -> None:
        n = self.n
        if not (0 <= self.root < n):
            raise ValidationError(f"root {self.root} outside 0..{n - 1}")
        if self.parent[self.root] is not None:
            raise ValidationError("root must have no parent")
        for i in range(n):
            for c in self.children[i]:
                if self.parent[c] != i:
                    raise ValidationError(f"child link {i}->{c} disagrees with parent[{c}]={self.parent[c]}")
        seen = _reachable(self)
        if len(seen) != n:
            raise ValidationError(f"tree reaches {len(seen)} of {n} nodes (cycle or disconnection)")


@dataclass
class BinaryTree:
    """Left-child right-sibling shaped tree; either child may be absent."""
    root: int
    parent: list
    left: list
    right: list

    @property
    def n(self) -> int:
        return len(self.parent)

    def children_of(self, i: int) -> list:
        return [c for c in (self.left[i], self.right[i]) if c is not None]

    def validate(self) -> None:
        n = self.n
        if not (0 <= self.root < n):
            raise ValidationError(f"root {self.root} outside 0..{n - 1}")
        if self.parent[self.root] is not None:
            raise ValidationError("root must have no parent")
        for i in range(n):
            for c in self.children_of(i):
                if self.parent[c] != i:
                    raise ValidationError(f"child link {i}->{c} disagrees with parent[{c}]={self.parent[c]}")
        seen = _reachable(self)
        if len(seen) != n:
            raise ValidationError(f"tree reaches {len(seen)} of {n} nodes (cycle or disconnection)")


def _reachable(tree) -> set:
    seen = set()
    stack = [tree.root]
    while stack:
        u = stack.pop()
        if u in seen:
            return seen  # cycle guard; validate() reports via count
        seen.add(u)
        stack.extend(tree.children_of(u))
    return seen


# -- construction trace ----------------------------------------------------


@dataclass
class TraceStep:
    edge: tuple                  # (u in tree, v in pool), v was attached under u
    candidates: list             # candidate (u, v) edges in enumeration order
    validities: np.ndarray       # score of each candidate
    probs: np.ndarray | None     # sampled mode only
    uniform: bool = False        # all-zero fallback used


@dataclass
class ConstructionTrace:
    steps: list = field(default_factory=list)
    log_prob: float | None = None    # sampled mode only


def trace_log_prob(trace: ConstructionTrace, scores: ScoreMatrix) -> Tensor:
    """Differentiable log-probability of a sampled construction.

    Gathers the exact candidate entries the sampler saw; uniform-fallback
    steps contribute a constant with no gradient.
    """
    total = Tensor(np.asarray(0.0))
    for step in trace.steps:
        if step.uniform:
            total = add_const(total, math.log(1.0 / len(step.candidates)))
            continue
        vals = scores.gather(step.candidates)
        chosen = step.candidates.index(step.edge)
        total = add(total, pick(log(vals), chosen) - log(tsum(vals)))
    return total


# -- spanning-tree construction --------------------------------------------


def _as_matrix(scores) -> np.ndarray:
    s = scores.values if isinstance(scores, ScoreMatrix) else np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValidationError(f"score matrix must be square, got shape {s.shape}")
    return s


def select_root(scores) -> int:
    """Node with the largest total score to all others; ties pick the lowest id."""
    s = _as_matrix(scores)
    sums = s.sum(axis=1) - np.diag(s)
    return int(np.argmax(sums))


def max_spanning_tree(scores, mode: str = "greedy",
                      rng: np.random.Generator | None = None
                      ) -> tuple[MultiBranchTree, ConstructionTrace]:
    """Grow a spanning tree from the root, one highest-score (or sampled)
    attachment at a time.

    Greedy mode takes the best candidate edge, ties broken by lowest
    (tree node, pool node) pair.  Sampled mode draws each attachment in
    proportion to raw scores over the current candidate edges; the root
    stays the deterministic one.  When every candidate scores zero the
    draw falls back to uniform and the step is marked.
    """
    if mode not in ("greedy", "sampled"):
        raise ValidationError(f"unknown construction mode '{mode}'")
    if mode == "sampled" and rng is None:
        raise ValidationError("sampled construction needs a random generator")
    s = _as_matrix(scores)
    n = s.shape[0]
    root = select_root(s)
    parent: list = [None] * n
    children: list = [[] for _ in range(n)]
    trace = ConstructionTrace(steps=[], log_prob=0.0 if mode == "sampled" else None)
    in_tree = [root]
    pool = [v for v in range(n) if v != root]
    while pool:
        candidates = [(u, v) for u in sorted(in_tree) for v in pool]
        vals = np.array([s[u, v] for u, v in candidates])
        if mode == "greedy":
            choice = int(np.argmax(vals))
            step = TraceStep(candidates[choice], candidates, vals, None)
        else:
            total = float(vals.sum())
            if total <= 0.0:
                probs = np.full(len(candidates), 1.0 / len(candidates))
                choice = _draw(rng, probs)
                step = TraceStep(candidates[choice], candidates, vals, probs, uniform=True)
                trace.log_prob += math.log(probs[choice])
            else:
                probs = vals / total
                choice = _draw(rng, probs)
                step = TraceStep(candidates[choice], candidates, vals, probs)
                trace.log_prob += math.log(vals[choice]) - math.log(total)
        u, v = step.edge
        parent[v] = u
        children[u].append(v)
        in_tree.append(v)
        pool.remove(v)
        trace.steps.append(step)
    return MultiBranchTree(root, parent, children), trace


def _draw(rng: np.random.Generator, probs: np.ndarray) -> int:
    r = rng.random()
    acc = 0.0
    for k, p in enumerate(probs):
        acc += p
        if r < acc:
            return k
    return len(probs) - 1


# -- binarization ----------------------------------------------------------


def binarize_lcrs(tree: MultiBranchTree) -> BinaryTree:
    """Left-child right-sibling rewrite.

    A node's first-attached child becomes its left child; each later
    child becomes the right child of the sibling attached just before it.
    """
    tree.validate()
    n = tree.n
    parent: list = [None] * n
    left: list = [None] * n
    right: list = [None] * n
    for u in range(n):
        kids = tree.children[u]
        if not kids:
            continue
        left[u] = kids[0]
        parent[kids[0]] = u
        for prev, nxt in zip(kids, kids[1:]):
            right[prev] = nxt
            parent[nxt] = prev
    return BinaryTree(tree.root, parent, left, right)


def debinarize_lcrs(tree: BinaryTree) -> MultiBranchTree:
    """Inverse of binarize_lcrs: right chains fold back into child lists."""
    tree.validate()
    n = tree.n
    parent: list = [None] * n
    children: list = [[] for _ in range(n)]
    stack = [tree.root]
    while stack:
        u = stack.pop()
        c = tree.left[u]
        while c is not None:
            children[u].append(c)
            parent[c] = u
            stack.append(c)
            c = tree.right[c]
    return MultiBranchTree(tree.root, parent, children)


# -- ablation structures ---------------------------------------------------


def chain_structure(scores) -> BinaryTree:
    """Degenerate left-child chain, nodes ordered by descending total score."""
    s = _as_matrix(scores)
    n = s.shape[0]
    sums = s.sum(axis=1) - np.diag(s)
    order = sorted(range(n), key=lambda i: (-sums[i], i))
    parent: list = [None] * n
    left: list = [None] * n
    for prev, nxt in zip(order, order[1:]):
        left[prev] = nxt
        parent[nxt] = prev
    return BinaryTree(order[0], parent, left, [None] * n)


def overlap_tree(proposals) -> BinaryTree:
    """Recursive split driven by box overlap counts.

    The node overlapping the most others becomes the parent; the rest go
    left or right of it by box-center x.  Ties pick the lowest id.
    """
    boxes = [p.box if hasattr(p, "box") else tuple(p) for p in proposals]
    n = len(boxes)
    if n == 0:
        raise ValidationError("overlap_tree: no proposals")
    parent: list = [None] * n
    left: list = [None] * n
    right: list = [None] * n

    def build(ids: list) -> int:
        if len(ids) == 1:
            return ids[0]
        counts = {i: sum(1 for j in ids if j != i and iou(boxes[i], boxes[j]) > 0) for i in ids}
        head = min(ids, key=lambda i: (-counts[i], i))
        cx = center(boxes[head])[0]
        lows = [i for i in ids if i != head and center(boxes[i])[0] <= cx]
        highs = [i for i in ids if i != head and center(boxes[i])[0] > cx]
        if lows:
            left[head] = build(lows)
            parent[left[head]] = head
        if highs:
            right[head] = build(highs)
            parent[right[head]] = head
        return head

    root = build(list(range(n)))
    return BinaryTree(root, parent, left, right)


# -- serialization ---------------------------------------------------------


def tree_to_json(tree: BinaryTree) -> dict:
    tree.validate()
    return {
        "n": tree.n,
        "root": tree.root,
        "nodes": [
            {"id": i, "parent": tree.parent[i], "left": tree.left[i], "right": tree.right[i]}
            for i in range(tree.n)
        ],
    }


def tree_from_json(doc: dict) -> BinaryTree:
    try:
        n = int(doc["n"])
        nodes = doc["nodes"]
        parent: list = [None] * n
        left: list = [None] * n
        right: list = [None] * n
        for entry in nodes:
            i = int(entry["id"])
            parent[i] = entry["parent"]
            left[i] = entry["left"]
            right[i] = entry["right"]
        tree = BinaryTree(int(doc["root"]), parent, left, right)
    except (KeyError, IndexError, TypeError) as exc:
        raise ValidationError(f"malformed tree document: {exc}") from exc
    tree.validate()
    return tree


def save_tree(path, tree: BinaryTree) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tree_to_json(tree), fh, sort_keys=True)
        fh.write("\n")


def load_tree(path) -> BinaryTree:
    with open(path, encoding="utf-8") as fh:
        return tree_from_json(json.load(fh))

"""Learnable pairwise scores between object proposals.

The score of a pair is S_ij = f(x_i, x_j) * g(x_i, x_j, q): f is a
sigmoid MLP over the concatenated pair features and estimates how
likely the two objects are related at all; g gates that by how relevant
each object is to the task at hand and collapses to exactly 1 when
there is no task feature (scene-graph mode).  The full matrix is
symmetrized, zero-diagonal, and tape-recorded so the policy gradient
can reach these parameters through sampled tree constructions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .boxes import check_box
from .errors import ConfigError, DimensionError, ValidationError
from .fusion import fuse
from .ndcore import ParamStore, Tensor
from .ndcore.layers import mlp
from .ndcore.optim import SgdMomentum
from .ndcore.tensor import (add, binary_cross_entropy_with_logits, concat,
                            mul, mul_const, pick, reshape, sigmoid, take)

F_PREFIX = "score.f"
H_PREFIX = "score.h"
FUSE_PREFIX = "score.fuse"
THETA_PREFIX = "score"


@dataclass
class ScoreConfig:
    f_hidden: tuple = (32,)
    h_hidden: tuple = (32,)
    fuse_dim: int = 32


@dataclass
class TaskFeature:
    """Optional task conditioning for the pair scorer (a question encoding)."""
    q: Tensor | None = None

    @property
    def present(self) -> bool:
        return self.q is not None


def spatial_feature(box, image_size) -> np.ndarray:
    """Normalized (x1, y1, x2, y2, cx, cy, w, h) of a box in its image."""
    x1, y1, x2, y2 = check_box(box, image_size)
    w, h = float(image_size[0]), float(image_size[1])
    return np.array([
        x1 / w, y1 / h, x2 / w, y2 / h,
        (x1 + x2) / 2.0 / w, (y1 + y2) / 2.0 / h,
        (x2 - x1) / w, (y2 - y1) / h,
    ])


@dataclass
class ObjectProposal:
    visual: np.ndarray
    box: tuple
    class_dist: np.ndarray
    image_size: tuple

    def __post_init__(self):
        self.visual = np.asarray(self.visual, dtype=np.float64)
        self.class_dist = np.asarray(self.class_dist, dtype=np.float64)
        if self.visual.ndim != 1:
            raise ValidationError(f"proposal visual feature must be 1-d, got shape {self.visual.shape}")
        if self.class_dist.ndim != 1:
            raise ValidationError(f"proposal class distribution must be 1-d, got shape {self.class_dist.shape}")
        if abs(float(self.class_dist.sum()) - 1.0) > 1e-6:
            raise ValidationError(f"proposal class distribution sums to {self.class_dist.sum()}, not 1")
        check_box(self.box, self.image_size)


def proposal_feature(p: ObjectProposal) -> np.ndarray:
    """Model input x_i: visual feature concatenated with the spatial one."""
    return np.concatenate([p.visual, spatial_feature(p.box, p.image_size)])


def _pair_logits(store: ParamStore, pair_feats: Tensor, cfg: ScoreConfig) -> Tensor:
    """Raw relatedness logits for a (P, 2d) batch of concatenated pairs."""
    out = mlp(store, F_PREFIX, pair_feats, [*cfg.f_hidden, 1])
    return reshape(out, (out.data.shape[0],))


def _task_gates(store: ParamStore, feats: Tensor, q: Tensor, cfg: ScoreConfig) -> Tensor:
    """Per-object sigmoid(h(x_i, q)) over a (n, d) feature batch."""
    fused = fuse(store, FUSE_PREFIX, feats, q, cfg.fuse_dim)
    hvals = mlp(store, H_PREFIX, fused, [*cfg.h_hidden, 1])
    return sigmoid(reshape(hvals, (hvals.data.shape[0],)))


def object_correlation(store: ParamStore, x_i: Tensor, x_j: Tensor,
                       cfg: ScoreConfig | None = None) -> Tensor:
    """f(x_i, x_j) in (0, 1): order-sensitive before symmetrization."""
    cfg = cfg or ScoreConfig()
    pair = reshape(concat([x_i, x_j]), (1, x_i.data.shape[0] + x_j.data.shape[0]))
    return pick(sigmoid(_pair_logits(store, pair, cfg)), 0)


def task_dependency(store: ParamStore, x_i: Tensor, x_j: Tensor,
                    q: Tensor | None = None, cfg: ScoreConfig | None = None) -> Tensor:
    """g(x_i, x_j, q): exactly 1 without a task feature, else a product of gates."""
    if q is None:
        return Tensor(np.asarray(1.0))
    cfg = cfg or ScoreConfig()
    feats = Tensor(np.stack([x_i.data, x_j.data]))
    gates = _task_gates(store, feats, q, cfg)
    return mul(pick(gates, 0), pick(gates, 1))


def upper_index(n: int, i: int, j: int) -> int:
    """Position of the unordered pair {i, j} in row-major upper-triangle order."""
    if i == j:
        raise ValidationError(f"pair ({i}, {j}) is a self-loop")
    a, b = (i, j) if i < j else (j, i)
    return a * (2 * n - a - 1) // 2 + (b - a - 1)


@dataclass
class ScoreMatrix:
    n: int
    upper: Tensor                 # n(n-1)/2 symmetrized entries, i<j row-major
    values: np.ndarray            # dense symmetric copy, zero diagonal
    f_values: np.ndarray          # raw order-sensitive f, zero diagonal
    g_values: np.ndarray          # task gates per ordered pair (ones in scene-graph mode)

    def value(self, i: int, j: int) -> float:
        return float(self.values[i, j])

    def gather(self, edges) -> Tensor:
        """Differentiable lookup of symmetrized entries for (u, v) pairs."""
        return take(self.upper, [upper_index(self.n, u, v) for u, v in edges])


def score_matrix(store: ParamStore, proposals, task_feature=None,
                 cfg: ScoreConfig | None = None, require_task: bool = False) -> ScoreMatrix:
    cfg = cfg or ScoreConfig()
    q = task_feature.q if isinstance(task_feature, TaskFeature) else task_feature
    if require_task and q is None:
        raise ConfigError("score_matrix: task-conditioned mode needs a task feature")
    n = len(proposals)
    if n == 0:
        raise ValidationError("score_matrix: no proposals")
    feats = np.stack([proposal_feature(p) for p in proposals])
    if n == 1:
        return ScoreMatrix(1, Tensor(np.zeros(0)), np.zeros((1, 1)),
                           np.zeros((1, 1)), np.ones((1, 1)))

    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    heads = [i for i, _ in pairs]
    tails = [j for _, j in pairs]
    pair_feats = Tensor(np.concatenate([feats[heads], feats[tails]], axis=1))
    f_flat = sigmoid(_pair_logits(store, pair_feats, cfg))

    if q is not None:
        gates = _task_gates(store, Tensor(feats), q, cfg)
        g_flat = mul(take(gates, heads), take(gates, tails))
        s_flat = mul(f_flat, g_flat)
    else:
        g_flat = None
        s_flat = f_flat

    pos = {pair: k for k, pair in enumerate(pairs)}
    fwd = [pos[(i, j)] for i in range(n) for j in range(i + 1, n)]
    rev = [pos[(j, i)] for i in range(n) for j in range(i + 1, n)]
    upper = mul_const(add(take(s_flat, fwd), take(s_flat, rev)), 0.5)

    values = np.zeros((n, n))
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            values[i, j] = values[j, i] = upper.data[k]
            k += 1

    f_values = np.zeros((n, n))
    g_values = np.ones((n, n))
    for k, (i, j) in enumerate(pairs):
        f_values[i, j] = f_flat.data[k]
        if g_flat is not None:
            g_values[i, j] = g_flat.data[k]
    return ScoreMatrix(n, upper, values, f_values, g_values)


@dataclass
class PretrainConfig:
    epochs: int = 10
    lr: float = 0.05
    momentum: float = 0.9


@dataclass
class PairSample:
    """Pretraining unit: per-object features and a symmetric relatedness mask."""
    features: np.ndarray          # (n, d)
    related: np.ndarray           # (n, n) bool, symmetric, False diagonal

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.related = np.asarray(self.related, dtype=bool)
        n = self.features.shape[0]
        if self.related.shape != (n, n):
            raise DimensionError(
                f"pair sample: features for {n} objects but mask shape {self.related.shape}")


def pretrain_correlation(store: ParamStore, samples, cfg: PretrainConfig | None = None,
                         score_cfg: ScoreConfig | None = None) -> list[float]:
    """Fit f by binary cross-entropy over every ordered pair of every sample.

    Both (i, j) and (j, i) are included, no subsampling.  Returns the mean
    loss per epoch.  Only score.f parameters move.
    """
    cfg = cfg or PretrainConfig()
    score_cfg = score_cfg or ScoreConfig()
    batches = []
    any_positive = False
    for s in samples:
        n = s.features.shape[0]
        if n < 2:
            continue
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        x = np.concatenate([s.features[[i for i, _ in pairs]],
                            s.features[[j for _, j in pairs]]], axis=1)
        y = np.array([float(s.related[i, j]) for i, j in pairs])
        any_positive = any_positive or bool(y.any())
        batches.append((x, y))
    if not batches:
        raise ValidationError("pretrain_correlation: no sample has at least two objects")
    if not any_positive:
        warnings.warn("pretrain_correlation: no positive pairs in any sample", stacklevel=2)

    # touch the parameters once so the optimizer can own exactly score.f
    _pair_logits(store, Tensor(batches[0][0]), score_cfg)
    opt = SgdMomentum(store, lr=cfg.lr, momentum=cfg.momentum,
                      names=store.select(F_PREFIX))
    from .ndcore.tensor import backward
    history = []
    for _ in range(cfg.epochs):
        total = 0.0
        for x, y in batches:
            store.zero_grad()
            logits = _pair_logits(store, Tensor(x), score_cfg)
            loss = binary_cross_entropy_with_logits(logits, y)
            backward(loss)
            opt.step()
            total += loss.item()
        history.append(total / len(batches))
    return history


def correlation_accuracy(store: ParamStore, samples,
                         score_cfg: ScoreConfig | None = None) -> float:
    """Fraction of ordered pairs where sigmoid(f) > 0.5 agrees with the mask."""
    score_cfg = score_cfg or ScoreConfig()
    hits = 0
    count = 0
    from .ndcore.tensor import no_grad
    with no_grad():
        for s in samples:
            n = s.features.shape[0]
            if n < 2:
                continue
            pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
            x = np.concatenate([s.features[[i for i, _ in pairs]],
                                s.features[[j for _, j in pairs]]], axis=1)
            logits = _pair_logits(store, Tensor(x), score_cfg)
            pred = logits.data > 0
            truth = np.array([s.related[i, j] for i, j in pairs])
            hits += int(np.sum(pred == truth))
            count += len(pairs)
    return hits / count if count else 0.0

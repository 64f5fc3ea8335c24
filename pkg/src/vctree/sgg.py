"""Scene-graph head: object/relation context encoding, parent-conditioned
label decoding, pairwise predicate prediction, and training-pair sampling.

All parameters live under the "sgg." prefix so the supervised optimizer can
own them as one group, separate from the tree-scoring parameters.
"""

from dataclasses import dataclass

import numpy as np

from .boxes import intersect_box, union_box
from .encoder import bitreelstm, preorder
from .errors import ValidationError
from .metrics import TripletRecord, rank_triplets
from .ndcore import (Tensor, concat, cross_entropy_index, dense, lstm_cell,
                     matmul, mlp, mul, no_grad, row, softmax, stack_rows)
from .scoring import proposal_feature, spatial_feature

SGG_PREFIX = "sgg"


@dataclass
class SggConfig:
    num_classes: int
    num_predicates: int           # background lives at index 0
    label_embed: int = 8
    hidden: int = 12              # per direction; context width is twice this
    pair_dim: int = 16
    pair_hidden: tuple = (24,)
    fg_bg_ratio: int = 3
    max_pairs: int = 64
    graph_constraint: bool = True


@dataclass
class GroundTruthGraph:
    boxes: list
    classes: list
    triplets: list                # (subject, predicate, object)
    image_size: tuple

    def validate(self, num_classes=None, num_predicates=None) -> None:
        n = len(self.boxes)
        if len(self.classes) != n:
            raise ValidationError(f"{len(self.classes)} classes for {n} boxes")
        if num_classes is not None and any(not 0 <= c < num_classes for c in self.classes):
            raise ValidationError("object class out of range")
        seen = set()
        for s, p, o in self.triplets:
            if not (0 <= s < n and 0 <= o < n):
                raise ValidationError(f"triplet ({s},{p},{o}) indexes outside 0..{n - 1}")
            if s == o:
                raise ValidationError(f"triplet ({s},{p},{o}) relates an object to itself")
            if num_predicates is not None and not 0 <= p < num_predicates:
                raise ValidationError(f"predicate {p} out of range")
            if (s, p, o) in seen:
                raise ValidationError(f"duplicate triplet ({s},{p},{o})")
            seen.add((s, p, o))


@dataclass
class SceneGraphPrediction:
    object_labels: list           # per-node class distribution (numpy)
    triplets: list                # ranked TripletRecord list
    boxes: list


def one_hot(index: int, n: int) -> Tensor:
    v = np.zeros(n)
    v[index] = 1.0
    return Tensor(v)


# -- context encoding ------------------------------------------------------


def object_context(store, proposals, tree, cfg: SggConfig) -> list:
    """d_i^o from inputs [x_i; embedded proposal class distribution]."""
    w1 = store.param("sgg.obj.embed.W", (cfg.label_embed, cfg.num_classes))
    inputs = [concat([Tensor(proposal_feature(p)), matmul(w1, Tensor(p.class_dist))])
              for p in proposals]
    return bitreelstm(store, "sgg.obj.ctx", tree, inputs, cfg.hidden)


def relation_context(store, object_ctx: list, tree, cfg: SggConfig) -> list:
    """Second context pass over d_i^o, with its own parameters."""
    return bitreelstm(store, "sgg.rel.ctx", tree, object_ctx, cfg.hidden)


# -- object label decoding -------------------------------------------------


def decode_objects(store, object_ctx: list, tree, cfg: SggConfig,
                   forced_labels=None) -> tuple:
    """Top-down label decoding: each node's input carries its parent's
    already-predicted distribution through an embedding, the root a zero
    vector, so a prediction can condition on its parent's.

    Returns (distributions, logits); forcing ground-truth labels (the
    predicate-classification protocol) short-circuits to one-hots.
    """
    n = tree.n
    if forced_labels is not None:
        if len(forced_labels) != n:
            raise ValidationError(f"{len(forced_labels)} forced labels for {n} nodes")
        return [one_hot(c, cfg.num_classes) for c in forced_labels], None
    w2 = store.param("sgg.decode.embed.W", (cfg.label_embed, cfg.num_classes))
    zero_embed = Tensor(np.zeros(cfg.label_embed))
    zero_h = Tensor(np.zeros(cfg.hidden))
    hs: list = [None] * n
    cs: list = [None] * n
    dists: list = [None] * n
    logits: list = [None] * n
    for node in preorder(tree):
        p = tree.parent[node]
        parent_embed = matmul(w2, dists[p]) if p is not None else zero_embed
        z = concat([object_ctx[node], parent_embed])
        hs[node], cs[node] = lstm_cell(store, "sgg.decode.lstm", z,
                                       hs[p] if p is not None else zero_h,
                                       cs[p] if p is not None else zero_h)
        logits[node] = dense(store, "sgg.decode.out", hs[node], cfg.num_classes)
        dists[node] = softmax(logits[node])
    return dists, logits


# -- pairwise predicate prediction -----------------------------------------


def box_pair_spatial(box_i, box_j, image_size) -> np.ndarray:
    inter = intersect_box(box_i, box_j)
    return np.concatenate([
        spatial_feature(box_i, image_size),
        spatial_feature(box_j, image_size),
        spatial_feature(union_box(box_i, box_j), image_size),
        spatial_feature(inter, image_size) if inter is not None else np.zeros(8),
    ])


def box_pair_feature(store, box_i, box_j, image_size, cfg: SggConfig) -> Tensor:
    """b_ij from the two boxes plus their union and intersection boxes;
    an empty intersection contributes the zero vector."""
    feats = Tensor(box_pair_spatial(box_i, box_j, image_size))
    return mlp(store, "sgg.pair.box", feats, [*cfg.pair_hidden, cfg.pair_dim])


def fuse_pair(d_ij: Tensor, v_ij: Tensor, b_ij: Tensor) -> Tensor:
    """g_ij: elementwise product of the three pair factors."""
    return mul(mul(d_ij, v_ij), b_ij)


def _check_pairs(pairs, n) -> None:
    for i, j in pairs:
        if i == j:
            raise ValidationError(f"pair ({i},{j}) relates an object to itself")
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"pair ({i},{j}) indexes outside 0..{n - 1}")


def pair_predicate_logits(store, relation_ctx: list, proposals, pairs,
                          union_features, cfg: SggConfig) -> Tensor:
    """(P, num_predicates) predicate logits for ordered pairs.

    union_features maps (i, j) to the union-region visual feature the
    harness supplies in place of a pooled image crop.
    """
    _check_pairs(pairs, len(proposals))
    image_size = proposals[0].image_size
    ctx = stack_rows([concat([relation_ctx[i], relation_ctx[j]]) for i, j in pairs])
    d = mlp(store, "sgg.pair.ctx", ctx, [*cfg.pair_hidden, cfg.pair_dim])
    boxes = np.stack([box_pair_spatial(proposals[i].box, proposals[j].box, image_size)
                      for i, j in pairs])
    b = mlp(store, "sgg.pair.box", Tensor(boxes), [*cfg.pair_hidden, cfg.pair_dim])
    vis = np.stack([np.asarray(union_features[(i, j)], dtype=np.float64) for i, j in pairs])
    v = dense(store, "sgg.pair.vis", Tensor(vis), cfg.pair_dim)
    return dense(store, "sgg.pair.out", fuse_pair(d, v, b), cfg.num_predicates)


def triplet_score(subject_score: float, object_score: float,
                  predicate_score: float) -> float:
    """Ranking convention, isolated here: product of the factor scores."""
    return float(subject_score) * float(object_score) * float(predicate_score)


def _stable_softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict_predicates(store, relation_ctx: list, proposals, object_dists,
                       pairs, union_features, cfg: SggConfig) -> list:
    """Ranked triplets over candidate pairs.

    Under the graph constraint only each pair's best non-background
    predicate enters the ranking; otherwise every non-background
    predicate does.
    """
    with no_grad():
        logits = pair_predicate_logits(store, relation_ctx, proposals, pairs,
                                       union_features, cfg).data
    probs = _stable_softmax(logits)
    labels = [int(np.argmax(d)) for d in object_dists]
    records = []
    for k, (i, j) in enumerate(pairs):
        cand = probs[k, 1:]
        if cfg.graph_constraint:
            best = int(np.argmax(cand)) + 1
            choices = [best]
        else:
            choices = range(1, cfg.num_predicates)
        for p in choices:
            records.append(TripletRecord(
                subject=i, object=j, predicate=int(p),
                score=triplet_score(object_dists[i][labels[i]],
                                    object_dists[j][labels[j]], probs[k, p]),
                subject_label=labels[i], object_label=labels[j],
                subject_box=tuple(proposals[i].box), object_box=tuple(proposals[j].box)))
    return rank_triplets(records)


def all_ordered_pairs(n: int) -> list:
    return [(i, j) for i in range(n) for j in range(n) if i != j]


# -- training --------------------------------------------------------------


def sample_training_pairs(gt: GroundTruthGraph, rng, cfg: SggConfig) -> tuple:
    """Foreground pairs straight from the ground truth plus background
    pairs drawn at the configured ratio, capped in total."""
    n = len(gt.boxes)
    fg = [((s, o), p) for s, p, o in gt.triplets]
    if len(fg) > cfg.max_pairs:
        keep = rng.permutation(len(fg))[:cfg.max_pairs]
        fg = [fg[k] for k in sorted(keep)]
    related = {(s, o) for s, _, o in gt.triplets}
    pool = [(i, j) for i in range(n) for j in range(n)
            if i != j and (i, j) not in related]
    want = min(len(pool), cfg.fg_bg_ratio * max(1, len(fg)), cfg.max_pairs - len(fg))
    picks = rng.permutation(len(pool))[:want]
    bg = [(pool[k], 0) for k in sorted(picks)]
    chosen = fg + bg
    return [pair for pair, _ in chosen], [label for _, label in chosen]


def sgg_loss(store, proposals, tree, gt: GroundTruthGraph, union_features,
             rng, cfg: SggConfig) -> Tensor:
    """Object cross-entropy plus predicate cross-entropy on sampled pairs."""
    gt.validate(cfg.num_classes, cfg.num_predicates)
    ctx = object_context(store, proposals, tree, cfg)
    _, logits = decode_objects(store, ctx, tree, cfg)
    obj = None
    for i, lg in enumerate(logits):
        term = cross_entropy_index(lg, gt.classes[i])
        obj = term if obj is None else obj + term
    obj = obj * (1.0 / len(logits))
    rel_ctx = relation_context(store, ctx, tree, cfg)
    pairs, labels = sample_training_pairs(gt, rng, cfg)
    if not labels:
        return obj
    plogits = pair_predicate_logits(store, rel_ctx, proposals, pairs,
                                    union_features, cfg)
    rel = None
    for k, label in enumerate(labels):
        term = cross_entropy_index(row(plogits, k), label)
        rel = term if rel is None else rel + term
    return obj + rel * (1.0 / len(labels))


# -- whole-scene prediction ------------------------------------------------


def predict_scene(store, proposals, tree, union_features, cfg: SggConfig,
                  forced_labels=None, pairs=None) -> SceneGraphPrediction:
    """End-to-end read-only pass producing ranked triplets and labels."""
    with no_grad():
        ctx = object_context(store, proposals, tree, cfg)
        dists, _ = decode_objects(store, ctx, tree, cfg, forced_labels=forced_labels)
        rel_ctx = relation_context(store, ctx, tree, cfg)
        if pairs is None:
            pairs = all_ordered_pairs(len(proposals))
        object_dists = [d.data for d in dists]
        records = predict_predicates(store, rel_ctx, proposals, object_dists,
                                     pairs, union_features, cfg)
    return SceneGraphPrediction(object_dists, records,
                                [tuple(p.box) for p in proposals])


def prediction_dump(prediction: SceneGraphPrediction) -> dict:
    """JSON form {triplets: [{s,o,p,score}], labels: [...]} for offline
    metric recomputation."""
    return {
        "triplets": [{"s": t.subject, "o": t.object, "p": t.predicate,
                      "score": t.score} for t in prediction.triplets],
        "labels": [int(np.argmax(d)) for d in prediction.object_labels],
    }

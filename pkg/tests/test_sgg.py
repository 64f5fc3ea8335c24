"""Scene-graph head: context trio checks, decode experiment, pair-factor
algebra, sampling contract, ranked prediction invariants."""

import json

import numpy as np
import pytest

from vctree.errors import ValidationError
from vctree.metrics import TripletRecord
from vctree.ndcore import (ParamStore, Tensor, backward, finite_difference_check,
                           make_optimizer, mlp, no_grad, tsum)
from vctree.scoring import ObjectProposal
from vctree.sgg import (GroundTruthGraph, SggConfig, all_ordered_pairs,
                        box_pair_feature, box_pair_spatial, decode_objects,
                        fuse_pair, object_context, one_hot,
                        pair_predicate_logits, predict_predicates,
                        predict_scene, prediction_dump, relation_context,
                        sample_training_pairs, sgg_loss, triplet_score)
from vctree.treebuild import BinaryTree
from test_scoring import rand_proposals

CFG = SggConfig(num_classes=4, num_predicates=3, label_embed=3, hidden=4,
                pair_dim=5, pair_hidden=(6,))


def small_tree(n):
    # left chain 0 -> 1 -> ... -> n-1
    parent = [None] + list(range(n - 1))
    left = list(range(1, n)) + [None]
    return BinaryTree(0, parent, left, [None] * n)


def union_feats(rng, proposals, dim=None):
    dim = dim if dim is not None else proposals[0].visual.shape[0]
    n = len(proposals)
    return {(i, j): rng.standard_normal(dim)
            for i in range(n) for j in range(n) if i != j}


# -- context encodings -----------------------------------------------------


def test_object_context_count_and_zero_params():
    rng = np.random.default_rng(0)
    props = rand_proposals(rng, 5)
    tree = small_tree(5)
    store = ParamStore(seed=0)
    ctx = object_context(store, props, tree, CFG)
    assert len(ctx) == 5 and all(d.data.shape == (2 * CFG.hidden,) for d in ctx)
    for name in store.names():
        store.set_value(name, np.zeros_like(store.get(name).data))
    ctx0 = object_context(store, props, tree, CFG)
    for d in ctx0:
        np.testing.assert_array_equal(d.data, np.zeros(2 * CFG.hidden))


def test_relation_context_uses_its_own_parameters():
    rng = np.random.default_rng(1)
    props = rand_proposals(rng, 4)
    tree = small_tree(4)
    store = ParamStore(seed=1)
    ctx = object_context(store, props, tree, CFG)
    before = set(store.names())
    rel = relation_context(store, ctx, tree, CFG)
    assert len(rel) == 4
    fresh = set(store.names()) - before
    assert fresh and all(n.startswith("sgg.rel.ctx") for n in fresh)


def test_object_context_gradients_reach_the_label_embedding():
    rng = np.random.default_rng(2)
    props = rand_proposals(rng, 4)
    tree = small_tree(4)
    store = ParamStore(seed=2)

    def loss():
        ctx = object_context(store, props, tree, CFG)
        total = ctx[0]
        for d in ctx[1:]:
            total = total + d
        return tsum(total)

    loss()
    assert finite_difference_check(loss, store, ["sgg.obj.embed.W"]) < 1e-4


# -- decoding --------------------------------------------------------------


def test_decode_distributions_sum_to_one():
    rng = np.random.default_rng(3)
    props = rand_proposals(rng, 5)
    tree = small_tree(5)
    store = ParamStore(seed=3)
    ctx = object_context(store, props, tree, CFG)
    dists, logits = decode_objects(store, ctx, tree, CFG)
    assert len(dists) == len(logits) == 5
    for d in dists:
        assert abs(float(d.data.sum()) - 1.0) < 1e-6
        assert d.data.min() >= 0


def test_root_prediction_ignores_other_nodes():
    rng = np.random.default_rng(4)
    tree = small_tree(3)
    store = ParamStore(seed=4)
    ctx = [Tensor(rng.standard_normal(2 * CFG.hidden)) for _ in range(3)]
    dists, _ = decode_objects(store, ctx, tree, CFG)
    ctx2 = [ctx[0], Tensor(rng.standard_normal(2 * CFG.hidden)), ctx[2]]
    dists2, _ = decode_objects(store, ctx2, tree, CFG)
    np.testing.assert_array_equal(dists[0].data, dists2[0].data)
    assert not np.allclose(dists[1].data, dists2[1].data)


def test_forced_labels_short_circuit_to_one_hots():
    store = ParamStore(seed=5)
    tree = small_tree(3)
    ctx = [Tensor(np.zeros(2 * CFG.hidden))] * 3
    dists, logits = decode_objects(store, ctx, tree, CFG, forced_labels=[2, 0, 1])
    assert logits is None
    np.testing.assert_array_equal(dists[0].data, [0, 0, 1, 0])
    np.testing.assert_array_equal(dists[1].data, [1, 0, 0, 0])
    with pytest.raises(ValidationError):
        decode_objects(store, ctx, tree, CFG, forced_labels=[0])


def decode_experiment_data(rng, scenes):
    """Star scenes whose child class is the root class shifted by 2; child
    features carry no class signal, so only the parent's predicted label
    can disambiguate them."""
    data = []
    for _ in range(scenes):
        root_class = int(rng.integers(0, 2))
        sign = 1.0 if root_class else -1.0
        feats = [np.array([sign, sign, 0.0, 0.0]) + 0.05 * rng.standard_normal(4)]
        classes = [root_class]
        for _ in range(3):
            feats.append(0.05 * rng.standard_normal(4))
            classes.append(root_class + 2)
        tree = BinaryTree(0, [None, 0, 1, 2], [1, None, None, None],
                          [None, 2, 3, None])  # root with three LCRS children
        data.append((tree, [Tensor(f) for f in feats], classes))
    return data


def test_parent_conditioned_decoding_beats_a_parent_blind_softmax():
    rng = np.random.default_rng(6)
    cfg = SggConfig(num_classes=4, num_predicates=3, label_embed=4, hidden=6)
    train = decode_experiment_data(rng, 30)
    test = decode_experiment_data(rng, 30)

    def child_accuracy(predict):
        right = total = 0
        for tree, feats, classes in test:
            with no_grad():
                dists = predict(tree, feats)
            for i in range(1, 4):
                right += int(np.argmax(dists[i].data) == classes[i])
                total += 1
        return right / total

    # informed: the shipped decoder, parent distribution fed through W2
    informed = ParamStore(seed=6)
    opt = make_optimizer("adam", informed, {"lr": 0.05})
    from vctree.ndcore import cross_entropy_index
    for _ in range(4):
        for tree, feats, classes in train:
            _, logits = decode_objects(informed, feats, tree, cfg)
            loss = None
            for lg, c in zip(logits, classes):
                term = cross_entropy_index(lg, c)
                loss = term if loss is None else loss + term
            backward(loss * (1.0 / len(classes)))
            opt.step()
    acc_informed = child_accuracy(
        lambda tree, feats: decode_objects(informed, feats, tree, cfg)[0])

    # blind: identical training, per-node softmax with no parent channel
    blind = ParamStore(seed=6)
    optb = make_optimizer("adam", blind, {"lr": 0.05})

    def blind_logits(feats):
        return [mlp(blind, "blind", f, [8, cfg.num_classes]) for f in feats]

    for _ in range(4):
        for tree, feats, classes in train:
            loss = None
            for lg, c in zip(blind_logits(feats), classes):
                term = cross_entropy_index(lg, c)
                loss = term if loss is None else loss + term
            backward(loss * (1.0 / len(classes)))
            optb.step()

    from vctree.ndcore import softmax as nd_softmax
    acc_blind = child_accuracy(
        lambda tree, feats: [nd_softmax(lg) for lg in blind_logits(feats)])

    assert acc_informed > acc_blind
    assert acc_informed > 0.9 and acc_blind < 0.65


# -- pair features ---------------------------------------------------------


def test_box_pair_spatial_hand_geometry():
    got = box_pair_spatial((0, 0, 2, 2), (1, 1, 3, 3), (4, 4))
    s_i = [0, 0, 0.5, 0.5, 0.25, 0.25, 0.5, 0.5]
    s_j = [0.25, 0.25, 0.75, 0.75, 0.5, 0.5, 0.5, 0.5]
    s_union = [0, 0, 0.75, 0.75, 0.375, 0.375, 0.75, 0.75]
    s_inter = [0.25, 0.25, 0.5, 0.5, 0.375, 0.375, 0.25, 0.25]
    np.testing.assert_allclose(got, np.concatenate([s_i, s_j, s_union, s_inter]))


def test_box_pair_spatial_identity_and_disjoint():
    same = box_pair_spatial((1, 1, 3, 3), (1, 1, 3, 3), (4, 4))
    np.testing.assert_array_equal(same[:8], same[8:16])
    np.testing.assert_array_equal(same[:8], same[16:24])
    np.testing.assert_array_equal(same[:8], same[24:])
    apart = box_pair_spatial((0, 0, 1, 1), (2, 2, 3, 3), (4, 4))
    np.testing.assert_array_equal(apart[24:], np.zeros(8))
    touching = box_pair_spatial((0, 0, 2, 2), (2, 0, 4, 2), (4, 4))
    np.testing.assert_array_equal(touching[24:], np.zeros(8))


def test_box_pair_feature_has_the_configured_width():
    store = ParamStore(seed=7)
    out = box_pair_feature(store, (0, 0, 2, 2), (1, 1, 3, 3), (4, 4), CFG)
    assert out.data.shape == (CFG.pair_dim,)


def test_fuse_pair_annihilates_on_any_zero_factor():
    rng = np.random.default_rng(8)
    d, v, b = (Tensor(rng.standard_normal(5)) for _ in range(3))
    zero = Tensor(np.zeros(5))
    for trio in ((zero, v, b), (d, zero, b), (d, v, zero)):
        np.testing.assert_array_equal(fuse_pair(*trio).data, np.zeros(5))
    np.testing.assert_allclose(fuse_pair(d, v, b).data,
                               d.data * v.data * b.data, rtol=1e-12)


def test_pair_logits_shape_and_self_pair_rejection():
    rng = np.random.default_rng(9)
    props = rand_proposals(rng, 4)
    tree = small_tree(4)
    store = ParamStore(seed=9)
    ctx = object_context(store, props, tree, CFG)
    rel = relation_context(store, ctx, tree, CFG)
    uf = union_feats(rng, props)
    pairs = all_ordered_pairs(4)
    logits = pair_predicate_logits(store, rel, props, pairs, uf, CFG)
    assert logits.data.shape == (12, CFG.num_predicates)
    with pytest.raises(ValidationError):
        pair_predicate_logits(store, rel, props, [(2, 2)], uf, CFG)


def test_pair_logits_gradients_pass_the_triple_product():
    rng = np.random.default_rng(10)
    props = rand_proposals(rng, 3)
    store = ParamStore(seed=10)
    rel = [Tensor(rng.standard_normal(2 * CFG.hidden)) for _ in range(3)]
    uf = union_feats(rng, props, dim=props[0].visual.shape[0])
    pairs = [(0, 1), (1, 2), (2, 0)]

    def loss():
        return tsum(pair_predicate_logits(store, rel, props, pairs, uf, CFG))

    loss()
    assert finite_difference_check(loss, store) < 1e-4


# -- ranked prediction -----------------------------------------------------


def test_predict_predicates_rank_and_graph_constraint():
    rng = np.random.default_rng(11)
    props = rand_proposals(rng, 4)
    tree = small_tree(4)
    store = ParamStore(seed=11)
    ctx = object_context(store, props, tree, CFG)
    rel = relation_context(store, ctx, tree, CFG)
    uf = union_feats(rng, props)
    dists = [np.full(CFG.num_classes, 0.25) for _ in range(4)]
    pairs = all_ordered_pairs(4)
    ranked = predict_predicates(store, rel, props, dists, pairs, uf, CFG)
    assert len(ranked) == len(pairs)  # one best predicate per pair
    assert all(a.score >= b.score for a, b in zip(ranked, ranked[1:]))
    assert all(t.subject != t.object and t.predicate >= 1 for t in ranked)

    free = SggConfig(**{**CFG.__dict__, "graph_constraint": False})
    ranked_free = predict_predicates(store, rel, props, dists, pairs, uf, free)
    assert len(ranked_free) == len(pairs) * (CFG.num_predicates - 1)


def test_predict_predicates_is_index_relabeling_equivariant():
    rng = np.random.default_rng(12)
    props = rand_proposals(rng, 4)
    store = ParamStore(seed=12)
    rel = [Tensor(rng.standard_normal(2 * CFG.hidden)) for _ in range(4)]
    uf = union_feats(rng, props)
    dists = [rng.dirichlet(np.ones(CFG.num_classes)) for _ in range(4)]
    ranked = predict_predicates(store, rel, props, dists, all_ordered_pairs(4), uf, CFG)

    perm = [2, 0, 3, 1]  # new index of each old node
    props_p = [None] * 4
    rel_p = [None] * 4
    dists_p = [None] * 4
    for old, new in enumerate(perm):
        props_p[new] = props[old]
        rel_p[new] = rel[old]
        dists_p[new] = dists[old]
    uf_p = {(perm[i], perm[j]): uf[(i, j)] for i, j in uf}
    ranked_p = predict_predicates(store, rel_p, props_p, dists_p,
                                  all_ordered_pairs(4), uf_p, CFG)

    base = {(perm[t.subject], perm[t.object], t.predicate): t.score for t in ranked}
    mapped = {(t.subject, t.object, t.predicate): t.score for t in ranked_p}
    assert base.keys() == mapped.keys()
    for key in base:
        assert base[key] == pytest.approx(mapped[key], rel=1e-12)


def test_triplet_score_is_the_plain_product():
    assert triplet_score(0.5, 0.4, 0.2) == pytest.approx(0.04)
    assert triplet_score(1.0, 1.0, 0.0) == 0.0


# -- training-pair sampling ------------------------------------------------


def graph_for_sampling(n, triplets):
    boxes = [(i, 0, i + 1, 1) for i in range(n)]
    return GroundTruthGraph(boxes, [0] * n, triplets, (n, 1))


def test_sampling_keeps_foreground_and_ratio():
    gt = graph_for_sampling(6, [(0, 1, 1), (2, 1, 3), (4, 2, 5)])
    pairs, labels = sample_training_pairs(gt, np.random.default_rng(13), CFG)
    fg = [(p, l) for p, l in zip(pairs, labels) if l != 0]
    assert sorted(fg) == [((0, 1), 1), ((2, 3), 1), ((4, 5), 2)]
    bg = [p for p, l in zip(pairs, labels) if l == 0]
    assert len(bg) == 3 * 3  # ratio 3 per foreground pair
    assert not set(bg) & {(0, 1), (2, 3), (4, 5)}
    assert len(set(bg)) == len(bg)


def test_sampling_respects_the_total_cap():
    cfg = SggConfig(num_classes=4, num_predicates=3, max_pairs=10)
    gt = graph_for_sampling(8, [(i, 1, i + 1) for i in range(4)])
    pairs, labels = sample_training_pairs(gt, np.random.default_rng(14), cfg)
    assert len(pairs) == 10  # 4 foreground + 6 background hit the cap
    assert sum(1 for l in labels if l != 0) == 4


def test_sampling_is_deterministic_given_the_generator_seed():
    gt = graph_for_sampling(7, [(0, 1, 1), (2, 2, 3)])
    a = sample_training_pairs(gt, np.random.default_rng(15), CFG)
    b = sample_training_pairs(gt, np.random.default_rng(15), CFG)
    assert a == b


# -- loss and scene prediction ---------------------------------------------


def scene_fixture(seed, n=4):
    rng = np.random.default_rng(seed)
    props = rand_proposals(rng, n)
    tree = small_tree(n)
    classes = [int(rng.integers(0, CFG.num_classes)) for _ in range(n)]
    triplets = [(0, 1, 1), (1, 2, 2), (2, 1, 3)][: n - 1]
    gt = GroundTruthGraph([p.box for p in props], classes, triplets,
                          props[0].image_size)
    return props, tree, gt, union_feats(rng, props), rng


def test_sgg_loss_is_a_finite_scalar_and_trains():
    props, tree, gt, uf, rng = scene_fixture(16)
    store = ParamStore(seed=16)
    opt = make_optimizer("adam", store, {"lr": 0.02})
    first = last = None
    for step in range(40):
        loss = sgg_loss(store, props, tree, gt, uf, np.random.default_rng(step), CFG)
        assert loss.data.shape == () and np.isfinite(loss.data)
        if first is None:
            first = float(loss.data)
        last = float(loss.data)
        backward(loss)
        opt.step()
    assert last < first  # memorizes one scene


def test_sgg_loss_gradients_match_finite_differences_on_key_parameters():
    props, tree, gt, uf, _ = scene_fixture(17)
    store = ParamStore(seed=17)

    def loss():
        return sgg_loss(store, props, tree, gt, uf, np.random.default_rng(0), CFG)

    loss()
    subset = [n for n in store.names()
              if n in ("sgg.obj.embed.W", "sgg.decode.embed.W", "sgg.pair.vis.W",
                       "sgg.pair.out.W", "sgg.pair.out.b", "sgg.decode.out.W")
              or n.startswith("sgg.pair.ctx.l0")
              or n.startswith("sgg.pair.box.l0.b")
              or n.startswith("sgg.rel.ctx.up.W_i")
              or n.startswith("sgg.obj.ctx.down.W_i")]
    assert len(subset) >= 8
    assert finite_difference_check(loss, store, subset) < 1e-4


def test_gt_graph_validation_catches_malformed_inputs():
    with pytest.raises(ValidationError):
        graph_for_sampling(3, [(0, 1, 0)]).validate()  # self-relation
    with pytest.raises(ValidationError):
        graph_for_sampling(3, [(0, 1, 5)]).validate()  # object out of range
    with pytest.raises(ValidationError):
        graph_for_sampling(3, [(0, 1, 1), (0, 1, 1)]).validate()  # duplicate
    with pytest.raises(ValidationError):
        graph_for_sampling(3, [(0, 9, 1)]).validate(num_predicates=8)


def test_predict_scene_and_dump_round_trip():
    props, tree, gt, uf, _ = scene_fixture(18)
    store = ParamStore(seed=18)
    pred = predict_scene(store, props, tree, uf, CFG)
    assert len(pred.object_labels) == 4 and len(pred.boxes) == 4
    assert all(a.score >= b.score for a, b in zip(pred.triplets, pred.triplets[1:]))
    doc = prediction_dump(pred)
    parsed = json.loads(json.dumps(doc, sort_keys=True))
    assert set(parsed) == {"triplets", "labels"}
    assert len(parsed["labels"]) == 4
    assert set(parsed["triplets"][0]) == {"s", "o", "p", "score"}


def test_predict_scene_with_forced_labels_keeps_them():
    props, tree, gt, uf, _ = scene_fixture(19)
    store = ParamStore(seed=19)
    pred = predict_scene(store, props, tree, uf, CFG, forced_labels=gt.classes)
    for dist, c in zip(pred.object_labels, gt.classes):
        np.testing.assert_array_equal(dist, one_hot(c, CFG.num_classes).data)
    assert all(t.subject_label == gt.classes[t.subject] for t in pred.triplets)

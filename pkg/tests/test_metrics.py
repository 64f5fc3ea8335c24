"""Metric checks against a from-scratch matching oracle plus the
hand-computable micro cases."""

from collections import Counter

import numpy as np
import pytest

from vctree.errors import ValidationError
from vctree.metrics import (RecallResult, TripletRecord, branch_statistics,
                            category_branches, corpus_recall_at_k,
                            greedy_match, mean_recall_at_k, rank_triplets,
                            recall_at_k)
from vctree.treebuild import BinaryTree


# -- oracle: an independent simulation of the matching rule ----------------


def oracle_iou(a, b):
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    if inter <= 0.0:
        return 0.0
    union = ((a[2] - a[0]) * (a[3] - a[1])
             + (b[2] - b[0]) * (b[3] - b[1]) - inter)
    return inter / union


def oracle_claims(predictions, gts, k, thr):
    ranked = sorted(predictions,
                    key=lambda t: (-t.score, t.subject, t.object, t.predicate))[:k]
    taken = set()
    for p in ranked:
        for gi, g in enumerate(gts):
            if gi in taken or p.predicate != g.predicate:
                continue
            if (p.subject_label, p.object_label) != (g.subject_label, g.object_label):
                continue
            if thr is None:
                ok = (p.subject, p.object) == (g.subject, g.object)
            else:
                ok = (oracle_iou(p.subject_box, g.subject_box) >= thr
                      and oracle_iou(p.object_box, g.object_box) >= thr)
            if ok:
                taken.add(gi)
                break
    return taken


def rand_box(rng):
    x1, y1 = int(rng.integers(0, 12)), int(rng.integers(0, 12))
    return (x1, y1, x1 + int(rng.integers(1, 5)), y1 + int(rng.integers(1, 5)))


def rand_record(rng, with_boxes):
    return TripletRecord(
        subject=int(rng.integers(0, 4)),
        object=int(rng.integers(0, 4)),
        predicate=int(rng.integers(0, 3)),
        score=round(float(rng.uniform(0, 1)), 1),  # quantized: force rank ties
        subject_label=int(rng.integers(0, 3)),
        object_label=int(rng.integers(0, 3)),
        subject_box=rand_box(rng) if with_boxes else None,
        object_box=rand_box(rng) if with_boxes else None,
    )


def rand_pair(rng, with_boxes):
    preds = [rand_record(rng, with_boxes) for _ in range(int(rng.integers(0, 9)))]
    gts = [rand_record(rng, with_boxes) for _ in range(int(rng.integers(0, 6)))]
    # seed guaranteed overlap so matches actually occur
    for g in gts:
        if rng.uniform() < 0.5:
            preds.append(TripletRecord(g.subject, g.object, g.predicate,
                                       round(float(rng.uniform(0, 1)), 1),
                                       g.subject_label, g.object_label,
                                       g.subject_box, g.object_box))
    return preds, gts


def test_recall_matches_bruteforce_oracle_on_200_random_pairs():
    rng = np.random.default_rng(0)
    for trial in range(200):
        with_boxes = trial % 2 == 1
        thr = 0.5 if with_boxes else None
        preds, gts = rand_pair(rng, with_boxes)
        k = int(rng.integers(1, 10))
        res = recall_at_k(preds, gts, k, iou_threshold=thr)
        want = oracle_claims(preds, gts, k, thr)
        if not gts:
            assert res.empty_gt and res.value == 1.0
        else:
            assert res.matched == len(want), f"trial {trial}"
            assert res.value == len(want) / len(gts)


def test_mean_recall_matches_oracle_accumulation():
    rng = np.random.default_rng(1)
    for trial in range(60):
        corpus = [rand_pair(rng, False) for _ in range(4)]
        k = int(rng.integers(1, 8))
        mr, per = mean_recall_at_k(corpus, k)
        totals, hits = Counter(), Counter()
        for preds, gts in corpus:
            taken = oracle_claims(preds, gts, k, None)
            for gi, g in enumerate(gts):
                totals[g.predicate] += 1
                hits[g.predicate] += int(gi in taken)
        want = {p: hits[p] / totals[p] for p in totals}
        assert per == want
        if want:
            # same summation order as the implementation: sorted by predicate
            assert mr == sum(want[p] for p in sorted(want)) / len(want)


# -- hand-computed cases ---------------------------------------------------


def t(s, o, p, score=1.0):
    return TripletRecord(s, o, p, score)


def test_perfect_predictions_score_one():
    gts = [t(0, 1, 1), t(1, 2, 2), t(2, 0, 1)]
    preds = [TripletRecord(g.subject, g.object, g.predicate, 0.9) for g in gts]
    assert recall_at_k(preds, gts, 3).value == 1.0


def test_top_two_containing_one_of_three_gives_third():
    gts = [t(0, 1, 1), t(1, 2, 2), t(2, 0, 1)]
    preds = [t(3, 3, 0, 0.9), t(1, 2, 2, 0.8), t(0, 1, 1, 0.1)]
    res = recall_at_k(preds, gts, 2)
    assert res.value == pytest.approx(1 / 3) and res.matched == 1


def test_duplicate_predictions_claim_a_gt_once():
    gts = [t(0, 1, 1), t(1, 0, 1)]
    preds = [t(0, 1, 1, 0.9), t(0, 1, 1, 0.8), t(0, 1, 1, 0.7)]
    assert recall_at_k(preds, gts, 3).value == 0.5


def test_recall_is_monotone_in_k():
    rng = np.random.default_rng(2)
    for _ in range(20):
        preds, gts = rand_pair(rng, False)
        if not gts:
            continue
        values = [recall_at_k(preds, gts, k).value for k in range(1, 12)]
        assert all(a <= b for a, b in zip(values, values[1:]))


def test_empty_gt_scores_one_with_flag():
    res = recall_at_k([t(0, 1, 1)], [], 5)
    assert res == RecallResult(1.0, 0, 0, empty_gt=True)
    with pytest.raises(ValidationError):
        recall_at_k([], [], 0)


def test_mismatched_labels_block_an_index_match():
    gt = TripletRecord(0, 1, 1, subject_label=2, object_label=2)
    hit = TripletRecord(0, 1, 1, 0.9, subject_label=2, object_label=2)
    miss = TripletRecord(0, 1, 1, 0.9, subject_label=0, object_label=2)
    assert recall_at_k([hit], [gt], 1).value == 1.0
    assert recall_at_k([miss], [gt], 1).value == 0.0


def test_box_matching_respects_the_threshold():
    gt = TripletRecord(0, 1, 1, subject_label=0, object_label=1,
                       subject_box=(0, 0, 10, 10), object_box=(20, 0, 30, 10))
    near = TripletRecord(5, 7, 1, 0.9, 0, 1, (0, 0, 10, 9), (20, 0, 30, 10))
    far = TripletRecord(5, 7, 1, 0.9, 0, 1, (0, 0, 10, 4), (20, 0, 30, 10))
    assert recall_at_k([near], [gt], 1, iou_threshold=0.5).value == 1.0
    assert recall_at_k([far], [gt], 1, iou_threshold=0.5).value == 0.0


def test_two_categories_with_known_recalls_average_to_half():
    # predicate 1: 4 of 5 matched (0.8); predicate 2: 1 of 5 matched (0.2)
    gts = [t(i, i + 1, 1) for i in range(5)] + [t(i, i + 2, 2) for i in range(5)]
    preds = ([TripletRecord(g.subject, g.object, 1, 0.9) for g in gts[:4]]
             + [TripletRecord(gts[5].subject, gts[5].object, 2, 0.9)])
    mr, per = mean_recall_at_k([(preds, gts)], 20)
    assert per == {1: 0.8, 2: 0.2}
    assert mr == pytest.approx(0.5)


def test_absent_category_is_excluded_from_the_mean():
    gts = [t(0, 1, 1)]
    preds = [t(0, 1, 1, 0.9)]
    mr, per = mean_recall_at_k([(preds, gts)], 5)
    assert per == {1: 1.0} and mr == 1.0  # predicate 2 never appears


def test_frequent_right_rare_wrong_splits_recall_and_mean_recall():
    gts = [t(i, i + 1, 1) for i in range(9)] + [t(0, 5, 2)]
    preds = [TripletRecord(g.subject, g.object, 1, 0.9) for g in gts[:9]]
    corpus = [(preds, gts)]
    assert corpus_recall_at_k(corpus, 20) == 0.9
    mr, _ = mean_recall_at_k(corpus, 20)
    assert mr == pytest.approx(0.5)


def test_single_category_mean_recall_equals_micro_recall():
    rng = np.random.default_rng(3)
    for _ in range(30):
        corpus = []
        for _ in range(3):
            preds, gts = rand_pair(rng, False)
            corpus.append(([TripletRecord(p.subject, p.object, 1, p.score,
                                          p.subject_label, p.object_label) for p in preds],
                           [TripletRecord(g.subject, g.object, 1, 0.0,
                                          g.subject_label, g.object_label) for g in gts]))
        if not any(gts for _, gts in corpus):
            continue
        k = int(rng.integers(1, 8))
        mr, _ = mean_recall_at_k(corpus, k)
        assert mr == corpus_recall_at_k(corpus, k)


def test_rank_is_deterministic_under_score_ties():
    preds = [t(2, 0, 1, 0.5), t(0, 2, 1, 0.5), t(0, 1, 2, 0.5)]
    ranked = rank_triplets(preds)
    assert [(r.subject, r.object, r.predicate) for r in ranked] == [
        (0, 1, 2), (0, 2, 1), (2, 0, 1)]


def test_greedy_match_prefers_earlier_gt_on_double_match():
    gts = [t(0, 1, 1), t(0, 1, 1)]
    claimed = greedy_match([t(0, 1, 1, 0.9)], gts)
    assert claimed == [True, False]


# -- branch statistics -----------------------------------------------------


def test_branch_statistics_single_edge():
    tree = BinaryTree(0, [None, 0], [1, None], [None, None])
    stats = branch_statistics([(tree, ["A", "B"])])
    assert stats == {"A": {"left": Counter({"B": 1}), "right": Counter()}}
    left, right = category_branches(stats, "A")
    assert left == Counter({"B": 1}) and right == Counter()
    assert category_branches(stats, "Z") == (Counter(), Counter())


def test_branch_statistics_conserve_child_count():
    rng = np.random.default_rng(4)
    from vctree.treebuild import binarize_lcrs, max_spanning_tree
    pairs = []
    total_children = 0
    for _ in range(20):
        n = int(rng.integers(2, 12))
        s = rng.uniform(0.1, 1.0, size=(n, n))
        s = (s + s.T) / 2
        np.fill_diagonal(s, 0.0)
        tree = binarize_lcrs(max_spanning_tree(s, "greedy")[0])
        labels = [int(rng.integers(0, 4)) for _ in range(n)]
        pairs.append((tree, labels))
        total_children += n - 1  # every non-root hangs off exactly one branch
    stats = branch_statistics(pairs)
    counted = sum(sum(entry[side].values()) for entry in stats.values()
                  for side in ("left", "right"))
    assert counted == total_children


def test_branch_statistics_rejects_label_length_mismatch():
    tree = BinaryTree(0, [None, 0], [1, None], [None, None])
    with pytest.raises(ValidationError):
        branch_statistics([(tree, ["A"])])

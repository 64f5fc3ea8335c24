"""Ranked-triplet matching metrics and corpus tree statistics."""

from collections import Counter
from dataclasses import dataclass

from .boxes import iou
from .errors import ValidationError


@dataclass(frozen=True)
class TripletRecord:
    """One (subject, object, predicate) assertion, prediction or ground truth.

    subject/object are node indices; labels and boxes ride along so a
    single record works under either matching regime.
    """
    subject: int
    object: int
    predicate: int
    score: float = 0.0
    subject_label: int | None = None
    object_label: int | None = None
    subject_box: tuple | None = None
    object_box: tuple | None = None


@dataclass
class RecallResult:
    value: float
    matched: int
    total: int
    empty_gt: bool = False


def rank_triplets(triplets):
    """Descending score; ties resolved by (subject, object, predicate)."""
    return sorted(triplets, key=lambda t: (-t.score, t.subject, t.object, t.predicate))


def _matches(pred: TripletRecord, gt: TripletRecord, iou_threshold) -> bool:
    if pred.predicate != gt.predicate:
        return False
    if pred.subject_label != gt.subject_label or pred.object_label != gt.object_label:
        return False
    if iou_threshold is None:
        return pred.subject == gt.subject and pred.object == gt.object
    return (iou(pred.subject_box, gt.subject_box) >= iou_threshold
            and iou(pred.object_box, gt.object_box) >= iou_threshold)


def greedy_match(predictions, ground_truth, iou_threshold=None) -> list:
    """Walk predictions in rank order; each ground-truth triplet can be
    claimed at most once.  Returns the per-GT claimed flags."""
    claimed = [False] * len(ground_truth)
    for pred in predictions:
        for gi, gt in enumerate(ground_truth):
            if not claimed[gi] and _matches(pred, gt, iou_threshold):
                claimed[gi] = True
                break
    return claimed


def recall_at_k(predictions, ground_truth, k: int, iou_threshold=None) -> RecallResult:
    """Fraction of ground-truth triplets recovered by the top-k predictions.

    Index matching compares subject/object node ids; box matching
    (iou_threshold set) compares boxes at the threshold instead.  Labels
    are compared in both regimes.  An image without ground truth scores
    1.0 and is flagged.
    """
    if k < 1:
        raise ValidationError(f"recall_at_k: k must be >= 1, got {k}")
    if not ground_truth:
        return RecallResult(1.0, 0, 0, empty_gt=True)
    claimed = greedy_match(rank_triplets(predictions)[:k], ground_truth, iou_threshold)
    matched = sum(claimed)
    return RecallResult(matched / len(ground_truth), matched, len(ground_truth))


def corpus_recall_at_k(corpus, k: int, iou_threshold=None) -> float:
    """Micro-averaged recall: total matched over total ground truth.

    The micro convention makes mean_recall_at_k collapse to this exact
    value whenever only one predicate category occurs.
    """
    matched = total = 0
    for predictions, gts in corpus:
        res = recall_at_k(predictions, gts, k, iou_threshold)
        matched += res.matched
        total += res.total
    return matched / total if total else 1.0


def mean_recall_at_k(corpus, k: int, iou_threshold=None) -> tuple:
    """Per-predicate recalls pooled over the corpus, then an unweighted
    mean over the categories that actually occur in the ground truth."""
    totals: Counter = Counter()
    hits: Counter = Counter()
    for predictions, gts in corpus:
        claimed = greedy_match(rank_triplets(predictions)[:k], gts, iou_threshold)
        for got, gt in zip(claimed, gts):
            totals[gt.predicate] += 1
            hits[gt.predicate] += int(got)
    per = {p: hits[p] / totals[p] for p in sorted(totals)}
    if not per:
        return 1.0, {}
    return sum(per.values()) / len(per), per


def branch_statistics(trees_and_labels) -> dict:
    """Tally child labels by the parent's label and branch side.

    Input: iterable of (binary tree, per-node labels).  Output maps each
    parent label to {"left": Counter, "right": Counter} over child labels.
    """
    stats: dict = {}
    for tree, labels in trees_and_labels:
        if len(labels) != tree.n:
            raise ValidationError(f"branch_statistics: {len(labels)} labels for a {tree.n}-node tree")
        for i in range(tree.n):
            for side, child in (("left", tree.left[i]), ("right", tree.right[i])):
                if child is None:
                    continue
                entry = stats.setdefault(labels[i], {"left": Counter(), "right": Counter()})
                entry[side][labels[child]] += 1
    return stats


def category_branches(stats: dict, label) -> tuple:
    """Left/right child histograms for one parent label; empty when absent."""
    entry = stats.get(label)
    if entry is None:
        return Counter(), Counter()
    return entry["left"], entry["right"]

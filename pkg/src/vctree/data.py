"""Synthetic scenes with planted context structure.

Each scene is a small part/whole world: 2-4 "whole" objects laid out left
to right, each holding a stack of "part" objects drawn inside it.  The
planted tree mirrors the layout (leftmost whole is the hub, other wholes
hang off it, parts hang off their whole), and relation triplets follow
the tree: hierarchical predicates connect part to whole, parallel
predicates connect adjacent parts of the same whole, and a left-of
predicate connects adjacent sibling wholes.

Features are class embeddings plus Gaussian noise, so class identity is
recoverable from a single object but containment is not: any part class
may sit inside any whole, which is what makes the "which whole holds the
X?" questions context dependent.

Everything is deterministic given the generator seed; each scene owns an
RNG stream derived from (seed, scene index) so scenes can be produced in
any order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError
from .scoring import ObjectProposal
from .sgg import GroundTruthGraph
from .treebuild import MultiBranchTree

# fixed stream tags so embeddings, scenes, and questions never share draws
_TAXONOMY_TAG = 101
_QUESTION_TAG = 202

# question vocabulary: three function words, then one token per class
TOKEN_WHICH = 0
TOKEN_IS = 1
TOKEN_HOLDS = 2
CLASS_TOKEN_BASE = 3

ANSWER_YES_OFFSET = 0   # yes = num_whole_classes + 0
ANSWER_NO_OFFSET = 1

CLASS_DIST_TEMPERATURE = 0.25


@dataclass
class GenSpec:
    num_train: int = 500
    num_test: int = 100
    min_objects: int = 6
    max_objects: int = 12
    num_whole_classes: int = 5
    parts_per_group: int = 3
    hier_predicates: int = 3
    parallel_predicates: int = 3
    feature_dim: int = 32
    noise: float = 0.15
    image_size: int = 64
    questions_per_scene: int = 3
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return self.num_whole_classes * (1 + self.parts_per_group)

    @property
    def num_part_classes(self) -> int:
        return self.num_whole_classes * self.parts_per_group

    @property
    def num_predicates(self) -> int:
        # background, hierarchical family, parallel family, left-of
        return 2 + self.hier_predicates + self.parallel_predicates

    @property
    def num_answers(self) -> int:
        return self.num_whole_classes + 2  # whole classes, yes, no

    @property
    def vocab_size(self) -> int:
        return CLASS_TOKEN_BASE + self.num_classes

    def validate(self) -> "GenSpec":
        if self.num_whole_classes < 1 or self.parts_per_group < 1:
            raise ValidationError("taxonomy needs at least one whole class "
                                  "and one part class per group")
        if self.hier_predicates < 1 or self.parallel_predicates < 1:
            raise ValidationError("both predicate families must be non-empty")
        if not 3 <= self.min_objects <= self.max_objects:
            raise ValidationError(
                f"object count range [{self.min_objects}, {self.max_objects}] "
                "must be increasing and allow two wholes plus a part")
        if self.max_objects - 2 > self.num_part_classes:
            raise ValidationError(
                f"a scene may need {self.max_objects - 2} distinct part "
                f"classes but the taxonomy only has {self.num_part_classes}")
        if self.noise < 0:
            raise ValidationError(f"noise must be >= 0, got {self.noise}")
        if self.feature_dim < 1 or self.image_size < 8:
            raise ValidationError("feature_dim >= 1 and image_size >= 8 required")
        if self.num_train < 0 or self.num_test < 0 or self.questions_per_scene < 0:
            raise ValidationError("counts must be non-negative")
        return self


def spec_from_dict(doc: dict) -> GenSpec:
    known = set(GenSpec.__dataclass_fields__)
    extra = set(doc) - known
    if extra:
        raise ValidationError(f"unknown generator fields: {sorted(extra)}")
    return GenSpec(**doc).validate()


def class_embeddings(spec: GenSpec) -> np.ndarray:
    """Unit-norm class prototypes; features are these plus noise."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _TAXONOMY_TAG]))
    e = rng.standard_normal((spec.num_classes, spec.feature_dim))
    return e / np.linalg.norm(e, axis=1, keepdims=True)


def part_classes_of(spec: GenSpec) -> list:
    return list(range(spec.num_whole_classes, spec.num_classes))


def class_name(spec: GenSpec, cls: int) -> str:
    if not 0 <= cls < spec.num_classes:
        raise ValidationError(f"class {cls} outside 0..{spec.num_classes - 1}")
    if cls < spec.num_whole_classes:
        return f"whole_{cls}"
    return f"part_{cls - spec.num_whole_classes}"


def hier_predicate(spec: GenSpec, part_class: int) -> int:
    return 1 + (part_class - spec.num_whole_classes) % spec.hier_predicates


def parallel_predicate(spec: GenSpec, whole_class: int) -> int:
    return 1 + spec.hier_predicates + whole_class % spec.parallel_predicates


def left_of_predicate(spec: GenSpec) -> int:
    return spec.num_predicates - 1


def _shrink(rng, lo: float, hi: float) -> tuple:
    """Random sub-interval keeping at least 20% of the parent extent, so
    nesting can never collapse or escape the parent."""
    w = hi - lo
    a = lo + float(rng.uniform(0.0, 0.4)) * w
    b = hi - float(rng.uniform(0.0, 0.4)) * w
    return round(a, 2), round(b, 2)


def _whole_boxes(rng, num_wholes: int, size: int) -> list:
    # one horizontal slot per whole, left to right, slots never overlap
    slot = size / num_wholes
    boxes = []
    for k in range(num_wholes):
        x1, x2 = _shrink(rng, k * slot, (k + 1) * slot)
        y1, y2 = _shrink(rng, 0.0, float(size))
        boxes.append((x1, y1, x2, y2))
    return boxes


def _part_boxes(rng, whole, count: int) -> list:
    # vertical stack of bands strictly inside the whole
    x1, y1, x2, y2 = whole
    band = (y2 - y1) / count
    boxes = []
    for k in range(count):
        px1, px2 = _shrink(rng, x1, x2)
        py1, py2 = _shrink(rng, y1 + k * band, y1 + (k + 1) * band)
        boxes.append((px1, py1, px2, py2))
    return boxes


def _feature(rng, embeddings, cls: int, noise: float) -> list:
    f = embeddings[cls] + noise * rng.standard_normal(embeddings.shape[1])
    return [float(v) for v in f]


def _class_dist(embeddings, feature) -> list:
    z = embeddings @ np.asarray(feature) / CLASS_DIST_TEMPERATURE
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return [float(v) for v in p]


def generate_scene(spec: GenSpec, index: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    embeddings = class_embeddings(spec)
    size = spec.image_size

    n = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    num_wholes = int(rng.integers(2, min(4, n - 1) + 1))
    whole_cls = [int(c) for c in
                 rng.choice(spec.num_whole_classes, size=num_wholes, replace=False)] \
        if num_wholes <= spec.num_whole_classes else \
        [int(c) for c in rng.integers(0, spec.num_whole_classes, size=num_wholes)]
    num_parts = n - num_wholes
    part_cls = [int(c) for c in
                rng.permutation(part_classes_of(spec))[:num_parts]]
    if num_parts > spec.num_part_classes:
        raise ValidationError(
            f"scene wants {num_parts} parts but only "
            f"{spec.num_part_classes} part classes exist")
    holder = [int(w) for w in rng.integers(0, num_wholes, size=num_parts)]

    wboxes = _whole_boxes(rng, num_wholes, size)
    objects, parent = [], []
    for w in range(num_wholes):
        objects.append({"class": whole_cls[w], "box": list(wboxes[w]),
                        "feature": _feature(rng, embeddings, whole_cls[w], spec.noise)})
        parent.append(None if w == 0 else 0)

    part_index = {}
    for w in range(num_wholes):
        members = [k for k in range(num_parts) if holder[k] == w]
        if not members:
            continue
        for k, box in zip(members, _part_boxes(rng, wboxes[w], len(members))):
            part_index[k] = len(objects)
            objects.append({"class": part_cls[k], "box": list(box),
                            "feature": _feature(rng, embeddings, part_cls[k],
                                                spec.noise)})
            parent.append(w)

    for obj in objects:
        obj["class_dist"] = _class_dist(embeddings, obj["feature"])

    triplets = []
    for k in range(num_parts):
        triplets.append([part_index[k], hier_predicate(spec, part_cls[k]),
                         holder[k]])
    for w in range(num_wholes):
        members = sorted(part_index[k] for k in range(num_parts) if holder[k] == w)
        for a, b in zip(members, members[1:]):
            triplets.append([a, parallel_predicate(spec, whole_cls[w]), b])
    for w in range(1, num_wholes - 1):
        triplets.append([w, left_of_predicate(spec), w + 1])

    return {"id": index,
            "image_size": [size, size],
            "noise": spec.noise,
            "pair_seed": int(rng.integers(2 ** 31)),
            "objects": objects,
            "triplets": triplets,
            "tree": {"root": 0, "parent": parent}}


def generate_scenes(spec: GenSpec, split: str = "train") -> list:
    spec.validate()
    if split == "train":
        indices = range(spec.num_train)
    elif split == "test":
        indices = range(spec.num_train, spec.num_train + spec.num_test)
    else:
        raise ValidationError(f"unknown split '{split}'")
    return [generate_scene(spec, i) for i in indices]


# --------------------------------------------------------------- questions


def generate_questions(spec: GenSpec, scene: dict) -> list:
    """Templated questions for one scene; answers follow the planted tree."""
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, scene["id"], _QUESTION_TAG]))
    classes = [o["class"] for o in scene["objects"]]
    parts = [i for i, c in enumerate(classes) if c >= spec.num_whole_classes]
    out = []

    def push(tokens, qtype, answer_index):
        answers = [0.0] * spec.num_answers
        answers[answer_index] = 1.0
        out.append({"scene": scene["id"], "tokens": tokens, "qtype": qtype,
                    "answers": answers})

    for q in range(spec.questions_per_scene):
        kind = q % 3
        if kind == 0 and parts:
            # which whole holds the <part>?  answer = holder's class
            i = int(rng.choice(parts))
            holder = scene["tree"]["parent"][i]
            push([TOKEN_WHICH, TOKEN_HOLDS, CLASS_TOKEN_BASE + classes[i]],
                 0, classes[holder])
        elif kind == 1:
            # is there a <present class>?  yes
            c = int(rng.choice(classes))
            push([TOKEN_IS, CLASS_TOKEN_BASE + c], 1,
                 spec.num_whole_classes + ANSWER_YES_OFFSET)
        else:
            absent = sorted(set(range(spec.num_classes)) - set(classes))
            if not absent:
                continue
            c = int(rng.choice(absent))
            push([TOKEN_IS, CLASS_TOKEN_BASE + c], 1,
                 spec.num_whole_classes + ANSWER_NO_OFFSET)
    return out


def balanced_pairs(questions: list) -> list:
    """Index pairs asking the identical question of different scenes with
    different correct answers."""
    by_tokens = {}
    for qid, q in enumerate(questions):
        by_tokens.setdefault(tuple(q["tokens"]), []).append(qid)
    pairs = []
    for _, group in sorted(by_tokens.items()):
        for a_pos, a in enumerate(group):
            qa = questions[a]
            for b in group[a_pos + 1:]:
                qb = questions[b]
                if qa["scene"] != qb["scene"] and qa["answers"] != qb["answers"]:
                    pairs.append([a, b])
    return pairs


# ----------------------------------------------------------------- dataset


def generate_dataset(spec: GenSpec, split: str = "train") -> dict:
    scenes = generate_scenes(spec, split)
    questions = [q for s in scenes for q in generate_questions(spec, s)]
    return {"spec": asdict(spec), "split": split, "scenes": scenes,
            "questions": questions, "balanced_pairs": balanced_pairs(questions)}


def validate_dataset(doc: dict) -> dict:
    for key in ("spec", "scenes", "questions"):
        if key not in doc:
            raise ValidationError(f"dataset missing '{key}'")
    spec = spec_from_dict(doc["spec"])
    for scene in doc["scenes"]:
        n = len(scene["objects"])
        tree = scene["tree"]
        if len(tree["parent"]) != n:
            raise ValidationError(f"scene {scene.get('id')}: tree does not "
                                  f"span the {n} objects")
        for i, p in enumerate(tree["parent"]):
            if p is None:
                if i != tree["root"]:
                    raise ValidationError(
                        f"scene {scene.get('id')}: non-root {i} lacks a parent")
            elif not 0 <= p < n:
                raise ValidationError(f"scene {scene.get('id')}: parent {p} "
                                      "out of range")
        for obj in scene["objects"]:
            if len(obj["feature"]) != spec.feature_dim:
                raise ValidationError("feature width disagrees with the spec")
            if not 0 <= obj["class"] < spec.num_classes:
                raise ValidationError(f"object class {obj['class']} out of range")
        for s, p, o in scene["triplets"]:
            if not (0 <= s < n and 0 <= o < n and s != o):
                raise ValidationError("triplet endpoints out of range")
            if not 1 <= p < spec.num_predicates:
                raise ValidationError(f"predicate {p} out of range")
    for q in doc["questions"]:
        if len(q["answers"]) != spec.num_answers:
            raise ValidationError("answer vector width disagrees with the spec")
        if any(t < 0 or t >= spec.vocab_size for t in q["tokens"]):
            raise ValidationError("question token out of vocabulary")
    return doc


def save_dataset(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_dataset(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return validate_dataset(json.load(fh))


# -------------------------------------------------- views for the engine


def scene_proposals(scene: dict) -> list:
    size = tuple(scene["image_size"])
    return [ObjectProposal(visual=np.asarray(o["feature"], dtype=np.float64),
                           box=tuple(o["box"]),
                           class_dist=np.asarray(o["class_dist"], dtype=np.float64),
                           image_size=size)
            for o in scene["objects"]]


def scene_tree(scene: dict) -> MultiBranchTree:
    parent = list(scene["tree"]["parent"])
    children = [[] for _ in parent]
    for i, p in enumerate(parent):
        if p is not None:
            children[p].append(i)
    return MultiBranchTree(scene["tree"]["root"], parent, children)


def scene_graph(scene: dict) -> GroundTruthGraph:
    return GroundTruthGraph(
        boxes=[tuple(o["box"]) for o in scene["objects"]],
        classes=[int(o["class"]) for o in scene["objects"]],
        triplets=[tuple(t) for t in scene["triplets"]],
        image_size=tuple(scene["image_size"]))


def union_feature(scene: dict, i: int, j: int) -> np.ndarray:
    """Pair visual feature: blended endpoints plus pair-specific noise,
    derived lazily from the scene's pair seed."""
    rng = np.random.default_rng(
        np.random.SeedSequence([scene["pair_seed"], i, j]))
    fi = np.asarray(scene["objects"][i]["feature"], dtype=np.float64)
    fj = np.asarray(scene["objects"][j]["feature"], dtype=np.float64)
    return 0.5 * (fi + fj) + scene["noise"] * rng.standard_normal(fi.shape[0])


def union_features(scene: dict, pairs) -> dict:
    return {(i, j): union_feature(scene, i, j) for i, j in pairs}

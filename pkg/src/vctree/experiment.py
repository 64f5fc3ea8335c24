"""End-to-end experiment drivers.

run_experiment glues the pipeline together for one config: data,
scorer pretraining, structure construction per scene, the alternating
training schedule, protocol evaluation, and artifact output (report,
checkpoint, trees, labels, step log).  Everything downstream of the
config and seed is deterministic, so reruns reproduce reports byte for
byte.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .config import SCORED_STRUCTURES, validate_config
from .data import (GenSpec, class_name, generate_dataset, load_dataset,
                   scene_graph, scene_proposals, spec_from_dict,
                   union_features)
from .errors import ConfigError, VCTreeError
from .learn import (MovingBaseline, StepLog, hybrid_schedule, reinforce_step,
                    supervised_step)
from .metrics import (TripletRecord, branch_statistics, corpus_recall_at_k,
                      mean_recall_at_k, recall_at_k)
from .ndcore import ParamStore, Tensor, make_optimizer, no_grad, save_checkpoint
from .scoring import (PairSample, PretrainConfig, ScoreConfig, TaskFeature,
                      correlation_accuracy, pretrain_correlation,
                      proposal_feature, score_matrix)
from .sgg import SggConfig, all_ordered_pairs, predict_scene, sgg_loss
from .treebuild import (binarize_lcrs, chain_structure, max_spanning_tree,
                        overlap_tree, save_tree)
from .vqa import (Question, VqaConfig, answer_loss, answer_score,
                  encode_question, type_one_hot, vqa_logits)
from .vqa import context_features as vqa_context_features


def _model_configs(cfg: dict, spec: GenSpec):
    m = cfg["model"]
    score = ScoreConfig(f_hidden=tuple(m["f_hidden"]),
                        h_hidden=tuple(m["f_hidden"]),
                        fuse_dim=m["fuse_dim"])
    sgg = SggConfig(num_classes=spec.num_classes,
                    num_predicates=spec.num_predicates,
                    label_embed=m["label_embed"], hidden=m["hidden"],
                    pair_dim=m["pair_dim"], pair_hidden=tuple(m["pair_hidden"]),
                    fg_bg_ratio=m["fg_bg_ratio"], max_pairs=m["max_pairs"],
                    graph_constraint=m["graph_constraint"])
    vqa = VqaConfig(vocab_size=spec.vocab_size, num_answers=spec.num_answers,
                    num_question_types=2, token_embed=m["token_embed"],
                    question_dim=m["question_dim"], hidden=m["hidden"],
                    fuse_dim=m["fuse_dim"],
                    attend_hidden=tuple(m["attend_hidden"]),
                    gate_hidden=tuple(m["gate_hidden"]),
                    type_embed=m["type_embed"],
                    ablate_context=m["ablate_context"])
    return score, sgg, vqa


def _load_splits(cfg: dict):
    data = cfg["data"]
    if "train" in data:
        train = load_dataset(data["train"])
        test = load_dataset(data["test"])
        spec = spec_from_dict(train["spec"])
    else:
        gen = dict(data["generate"])
        gen.setdefault("seed", cfg["seed"])
        spec = spec_from_dict(gen)
        train = generate_dataset(spec, "train")
        test = generate_dataset(spec, "test")
    return spec, train, test


def build_structure(store, proposals, structure: str, mode: str, rng,
                    score_cfg: ScoreConfig, task_feature=None):
    """One scene's tree, built without gradient (policy-gradient training
    builds its own differentiable traces inside reinforce_step).

    Returns (tree, trace, score matrix); the trace and matrix are None
    when the structure is not score driven.
    """
    if structure == "overlap":
        return overlap_tree(proposals), None, None
    with no_grad():
        sm = score_matrix(store, proposals, task_feature, score_cfg)
        if structure == "chain":
            return chain_structure(sm), None, None
        mtree, trace = max_spanning_tree(sm, mode, rng)
    if structure == "multibranch":
        return mtree, trace, sm
    return binarize_lcrs(mtree), trace, sm


def _pretrain_scorer(store, cfg, train, score_cfg, log):
    epochs = cfg["train"]["pretrain_epochs"]
    result = {"epochs": epochs, "loss": None, "accuracy": None}
    if epochs == 0 or cfg["structure"] == "overlap":
        return result
    samples = []
    for scene in train["scenes"]:
        feats = np.stack([proposal_feature(p) for p in scene_proposals(scene)])
        n = feats.shape[0]
        related = np.zeros((n, n), dtype=bool)
        for i, p in enumerate(scene["tree"]["parent"]):
            if p is not None:
                related[i, p] = related[p, i] = True
        for s, _, o in scene["triplets"]:
            related[s, o] = related[o, s] = True
        samples.append(PairSample(feats, related))
    losses = pretrain_correlation(store, samples, PretrainConfig(epochs=epochs),
                                  score_cfg)
    for step, loss in enumerate(losses):
        log.record("pretrain_f", step, loss=loss)
    result["loss"] = losses[-1]
    result["accuracy"] = correlation_accuracy(store, samples, score_cfg)
    return result


def _task_optimizer(cfg, store):
    names = [n for n in store.names() if not n.startswith("score")]
    hyper = {"lr": cfg["train"]["lr"]}
    return make_optimizer(cfg["train"]["optimizer"], store, hyper, names)


def _policy_optimizer(cfg, store):
    names = store.select("score")
    if not names:
        raise ConfigError("no structure parameters exist; cannot reinforce")
    return make_optimizer("adam", store, {"lr": cfg["train"]["rl_lr"]}, names)


# ------------------------------------------------------------------- SGG


def _gt_records(gt):
    return [TripletRecord(subject=s, object=o, predicate=p,
                          subject_label=gt.classes[s], object_label=gt.classes[o],
                          subject_box=gt.boxes[s], object_box=gt.boxes[o])
            for s, p, o in gt.triplets]


def _scene_bundle(scene):
    proposals = scene_proposals(scene)
    gt = scene_graph(scene)
    uf = union_features(scene, all_ordered_pairs(len(proposals)))
    return proposals, gt, uf


def _sgg_predict(store, scene, structure, score_cfg, sgg_cfg, protocol, rng):
    proposals, gt, uf = _scene_bundle(scene)
    tree, _, _ = build_structure(store, proposals, structure, "greedy", rng,
                                 score_cfg)
    forced = gt.classes if protocol == "predcls" else None
    pred = predict_scene(store, proposals, tree, uf, sgg_cfg,
                         forced_labels=forced)
    return pred, _gt_records(gt), tree


def evaluate_sgg(store, scenes, structure, score_cfg, sgg_cfg, protocol,
                 k: int, rng=None) -> dict:
    rng = rng or np.random.default_rng(0)
    iou = 0.5 if protocol == "sggen" else None
    corpus = []
    for scene in scenes:
        pred, gts, _ = _sgg_predict(store, scene, structure, score_cfg,
                                    sgg_cfg, protocol, rng)
        corpus.append((pred.triplets, gts))
    recall = corpus_recall_at_k(corpus, k, iou)
    mean, per = mean_recall_at_k(corpus, k, iou)
    return {"protocol": protocol, "k": k, "recall_at_k": recall,
            "mean_recall_at_k": mean,
            "per_predicate": {str(p): v for p, v in per.items()}}


def _run_sgg(cfg, store, train, test, score_cfg, sgg_cfg, log):
    structure, mode = cfg["structure"], cfg["mode"]
    k = cfg["eval"]["k"]
    reward_protocol = cfg["eval"]["protocols"][0]
    scenes = train["scenes"]
    step_counter = {"supervised": 0, "reinforce": 0}

    # materialize every head parameter so optimizers can take ownership
    warm_rng = np.random.default_rng(0)
    proposals, gt, uf = _scene_bundle(scenes[0])
    tree, _, _ = build_structure(store, proposals, structure, "greedy",
                                 warm_rng, score_cfg)
    sgg_loss(store, proposals, tree, gt, uf, warm_rng, sgg_cfg)
    store.zero_grad()
    task_opt = _task_optimizer(cfg, store)

    def run_supervised(round_index):
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg["seed"], 1, round_index]))
        last = None
        for epoch in range(cfg["train"]["epochs"]):
            total, count = 0.0, 0
            for scene in scenes:
                proposals, gt, uf = _scene_bundle(scene)
                tree, _, _ = build_structure(store, proposals, structure,
                                             "greedy", rng, score_cfg)
                loss = supervised_step(
                    store, task_opt,
                    lambda: sgg_loss(store, proposals, tree, gt, uf, rng, sgg_cfg),
                    context=f"scene-{scene['id']}")
                if loss is not None:
                    total, count = total + loss, count + 1
            last = total / max(count, 1)
            log.record("supervised", step_counter["supervised"], loss=last)
            step_counter["supervised"] += 1
        return {"loss": last}

    def run_reinforce(round_index):
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg["seed"], 2, round_index]))
        policy_opt = _policy_optimizer(cfg, store)
        moving = MovingBaseline()
        iou = 0.5 if reward_protocol == "sggen" else None
        rewards = []
        for episode in range(cfg["train"]["rl_episodes"]):
            scene = scenes[episode % len(scenes)]
            proposals, gt, uf = _scene_bundle(scene)
            gts = _gt_records(gt)
            forced = gt.classes if reward_protocol == "predcls" else None

            def reward_fn(mtree):
                tree = binarize_lcrs(mtree) if structure == "vctree" else mtree
                pred = predict_scene(store, proposals, tree, uf, sgg_cfg,
                                     forced_labels=forced)
                return recall_at_k(pred.triplets, gts, k, iou).value

            ep = reinforce_step(
                store, policy_opt,
                lambda: score_matrix(store, proposals, cfg=score_cfg),
                reward_fn, rng, baseline=cfg["train"]["baseline"],
                moving=moving, clip_norm=cfg["train"]["clip_norm"])
            rewards.append(ep.reward)
            log.record("reinforce", step_counter["reinforce"], loss=ep.loss,
                       reward=ep.reward, baseline=ep.baseline)
            step_counter["reinforce"] += 1
        return {"mean_reward": float(np.mean(rewards)) if rewards else None}

    phases = hybrid_schedule(run_supervised, run_reinforce,
                             rounds=cfg["train"]["rounds"])

    metrics = {}
    for protocol in cfg["eval"]["protocols"]:
        metrics[protocol] = evaluate_sgg(store, test["scenes"], structure,
                                         score_cfg, sgg_cfg, protocol, k)
    return phases, metrics


# ------------------------------------------------------------------- VQA


def _question_obj(q):
    return Question(list(q["tokens"]), int(q["qtype"]),
                    np.asarray(q["answers"], dtype=np.float64))


def _vqa_forward_parts(store, scene, question, structure, score_cfg, vqa_cfg,
                       tree_mode, rng):
    """Question-conditioned structure, then answer logits over it."""
    proposals = scene_proposals(scene)
    q = encode_question(store, question.tokens, vqa_cfg)
    with no_grad():
        frozen_q = Tensor(np.array(q.data))
    task = TaskFeature(frozen_q)
    tree, trace, sm = build_structure(store, proposals, structure, tree_mode,
                                      rng, score_cfg, task_feature=task)
    visual = [Tensor(proposal_feature(p)) for p in proposals]
    context = None if vqa_cfg.ablate_context else \
        vqa_context_features(store, proposals, tree, vqa_cfg)
    logits = vqa_logits(store, visual, context, q,
                        type_one_hot(question.qtype, 2), vqa_cfg)
    return logits, tree


def evaluate_vqa(store, dataset, structure, score_cfg, vqa_cfg) -> dict:
    by_id = {s["id"]: s for s in dataset["scenes"]}
    rng = np.random.default_rng(0)
    correct = {}
    for qid, q in enumerate(dataset["questions"]):
        question = _question_obj(q)
        with no_grad():
            logits, _ = _vqa_forward_parts(store, by_id[q["scene"]], question,
                                           structure, score_cfg, vqa_cfg,
                                           "greedy", rng)
        correct[qid] = answer_score(logits.data, question.answers) == 1.0
    pairs = dataset.get("balanced_pairs", [])
    pair_hits = sum(1 for a, b in pairs if correct[a] and correct[b])
    return {"accuracy": float(np.mean(list(correct.values())))
            if correct else None,
            "balanced_pair_accuracy": pair_hits / len(pairs) if pairs else None,
            "num_questions": len(correct), "num_pairs": len(pairs)}


def _run_vqa(cfg, store, train, test, score_cfg, vqa_cfg, log):
    structure = cfg["structure"]
    by_id = {s["id"]: s for s in train["scenes"]}
    questions = train["questions"]
    step_counter = {"supervised": 0, "reinforce": 0}

    warm_rng = np.random.default_rng(0)
    q0 = _question_obj(questions[0])
    logits, _ = _vqa_forward_parts(store, by_id[questions[0]["scene"]], q0,
                                   structure, score_cfg, vqa_cfg, "greedy",
                                   warm_rng)
    answer_loss(logits, q0.answers)
    store.zero_grad()
    task_opt = _task_optimizer(cfg, store)

    def run_supervised(round_index):
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg["seed"], 1, round_index]))
        last = None
        for epoch in range(cfg["train"]["epochs"]):
            total, count = 0.0, 0
            for q in questions:
                question = _question_obj(q)
                scene = by_id[q["scene"]]

                def loss_fn():
                    logits, _ = _vqa_forward_parts(
                        store, scene, question, structure, score_cfg, vqa_cfg,
                        "greedy", rng)
                    return answer_loss(logits, question.answers)

                loss = supervised_step(store, task_opt, loss_fn,
                                       context=f"question-on-scene-{q['scene']}")
                if loss is not None:
                    total, count = total + loss, count + 1
            last = total / max(count, 1)
            log.record("supervised", step_counter["supervised"], loss=last)
            step_counter["supervised"] += 1
        return {"loss": last}

    def run_reinforce(round_index):
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg["seed"], 2, round_index]))
        policy_opt = _policy_optimizer(cfg, store)
        moving = MovingBaseline()
        rewards = []
        for episode in range(cfg["train"]["rl_episodes"]):
            q = questions[episode % len(questions)]
            question = _question_obj(q)
            scene = by_id[q["scene"]]
            proposals = scene_proposals(scene)
            with no_grad():
                q_enc = encode_question(store, question.tokens, vqa_cfg)
            task = TaskFeature(Tensor(np.array(q_enc.data)))

            def reward_fn(mtree):
                tree = binarize_lcrs(mtree) if structure == "vctree" else mtree
                visual = [Tensor(proposal_feature(p)) for p in proposals]
                context = None if vqa_cfg.ablate_context else \
                    vqa_context_features(store, proposals, tree, vqa_cfg)
                logits = vqa_logits(store, visual, context, q_enc,
                                    type_one_hot(question.qtype, 2), vqa_cfg)
                return answer_score(logits.data, question.answers)

            ep = reinforce_step(
                store, policy_opt,
                lambda: score_matrix(store, proposals, task, score_cfg),
                reward_fn, rng, baseline=cfg["train"]["baseline"],
                moving=moving, clip_norm=cfg["train"]["clip_norm"])
            rewards.append(ep.reward)
            log.record("reinforce", step_counter["reinforce"], loss=ep.loss,
                       reward=ep.reward, baseline=ep.baseline)
            step_counter["reinforce"] += 1
        return {"mean_reward": float(np.mean(rewards)) if rewards else None}

    phases = hybrid_schedule(run_supervised, run_reinforce,
                             rounds=cfg["train"]["rounds"])
    return phases, {"vqa": evaluate_vqa(store, test, structure, score_cfg,
                                        vqa_cfg)}


# ---------------------------------------------------------------- driver


def _write_artifacts(out_dir, cfg, store, spec, test, score_cfg, report):
    os.makedirs(out_dir, exist_ok=True)
    trees_dir = os.path.join(out_dir, "trees")
    os.makedirs(trees_dir, exist_ok=True)
    rng = np.random.default_rng(0)
    stats_input = []
    for scene in test["scenes"]:
        proposals = scene_proposals(scene)
        tree, _, _ = build_structure(store, proposals, cfg["structure"],
                                     "greedy", rng, score_cfg)
        if not hasattr(tree, "left"):
            tree = binarize_lcrs(tree)
        save_tree(os.path.join(trees_dir, f"scene-{scene['id']}.tree.json"), tree)
        labels = [class_name(spec, o["class"]) for o in scene["objects"]]
        with open(os.path.join(trees_dir, f"scene-{scene['id']}.labels.json"),
                  "w", encoding="utf-8") as fh:
            json.dump({"labels": labels}, fh, sort_keys=True)
            fh.write("\n")
        stats_input.append((tree, labels))
    report["branch_statistics_categories"] = sorted(
        branch_statistics(stats_input))
    save_checkpoint(os.path.join(out_dir, "checkpoint.ndc"), store,
                    extra={"config": cfg})
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def run_experiment(config: dict, out_dir=None) -> dict:
    cfg = validate_config(config)
    spec, train, test = _load_splits(cfg)
    store = ParamStore(cfg["seed"])
    score_cfg, sgg_cfg, vqa_cfg = _model_configs(cfg, spec)

    log_path = os.path.join(out_dir, "log.jsonl") if out_dir else os.devnull
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    with StepLog(log_path) as log:
        pretrain = _pretrain_scorer(store, cfg, train, score_cfg, log)
        try:
            if cfg["task"] == "sgg":
                phases, metrics = _run_sgg(cfg, store, train, test, score_cfg,
                                           sgg_cfg, log)
            else:
                phases, metrics = _run_vqa(cfg, store, train, test, score_cfg,
                                           vqa_cfg, log)
        except VCTreeError as err:
            raise type(err)(f"[task={cfg['task']} structure={cfg['structure']} "
                            f"mode={cfg['mode']}] {err}") from err

    report = {
        "config": cfg,
        "task": cfg["task"], "structure": cfg["structure"],
        "mode": cfg["mode"], "seed": cfg["seed"],
        "pretrain": pretrain,
        "phases": phases,
        "metrics": metrics,
    }
    if out_dir:
        _write_artifacts(out_dir, cfg, store, spec, test, score_cfg, report)
    return report


def comparison_table(reports) -> dict:
    """Side-by-side metric table across structure variants, keyed by
    '<structure>-<mode>'."""
    table = {}
    for report in reports:
        key = f"{report['structure']}-{report['mode']}"
        row = {}
        for protocol, m in report["metrics"].items():
            if protocol == "vqa":
                row["accuracy"] = m["accuracy"]
                row["balanced_pair_accuracy"] = m["balanced_pair_accuracy"]
            else:
                row[f"{protocol}_recall_at_{m['k']}"] = m["recall_at_k"]
                row[f"{protocol}_mean_recall_at_{m['k']}"] = m["mean_recall_at_k"]
        table[key] = row
    return table

"""Command-line entry points.

Subcommands: train, eval, build-tree, gen-data, stats.  Every failure
path emits one machine-readable JSON object on stderr and a nonzero
exit code, so shell pipelines can branch on structured errors instead
of scraping tracebacks.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys

import numpy as np

from .config import SGG_PROTOCOLS, load_config, validate_config
from .data import load_dataset, save_dataset, generate_dataset, spec_from_dict
from .errors import ConfigError, ValidationError, VCTreeError
from .experiment import evaluate_sgg, evaluate_vqa, run_experiment
from .metrics import branch_statistics, category_branches
from .ndcore import load_checkpoint
from .treebuild import binarize_lcrs, load_tree, max_spanning_tree, save_tree


class _JsonArgumentParser(argparse.ArgumentParser):
    """argparse that keeps the error contract: JSON on stderr, exit 2."""

    def error(self, message):
        _emit_error(ConfigError(message))
        raise SystemExit(2)


def _emit_error(err: Exception) -> None:
    doc = {"error": type(err).__name__, "message": str(err)}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def _print(doc) -> None:
    print(json.dumps(doc, sort_keys=True, indent=2))


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg = validate_config(cfg)
    out = args.out or os.path.join(
        "runs", f"{cfg['task']}-{cfg['structure']}-{cfg['mode']}-seed{cfg['seed']}")
    report = run_experiment(cfg, out_dir=out)
    _print({"out_dir": out, "metrics": report["metrics"]})
    return 0


def _eval_configs(cfg, dataset):
    from .experiment import _model_configs
    spec = spec_from_dict(dataset["spec"])
    return (spec, *_model_configs(cfg, spec))


def cmd_eval(args) -> int:
    store, extra = load_checkpoint(args.checkpoint)
    cfg = extra.get("config")
    if not isinstance(cfg, dict):
        raise ValidationError(
            f"checkpoint {args.checkpoint} carries no training config")
    cfg = validate_config(cfg)
    dataset = load_dataset(args.data)
    spec, score_cfg, sgg_cfg, vqa_cfg = _eval_configs(cfg, dataset)
    if args.protocol == "vqa":
        if cfg["task"] != "vqa":
            raise ConfigError(
                f"protocol vqa needs a vqa checkpoint, found task={cfg['task']}")
        metrics = evaluate_vqa(store, dataset, cfg["structure"], score_cfg,
                               vqa_cfg)
    else:
        if cfg["task"] != "sgg":
            raise ConfigError(
                f"protocol {args.protocol} needs an sgg checkpoint, "
                f"found task={cfg['task']}")
        metrics = evaluate_sgg(store, dataset["scenes"], cfg["structure"],
                               score_cfg, sgg_cfg, args.protocol,
                               cfg["eval"]["k"])
    _print({"protocol": args.protocol, "metrics": metrics})
    return 0


def _load_scores(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    values = doc.get("scores") if isinstance(doc, dict) else doc
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(
            f"scores file {path} must hold a square matrix, got shape "
            f"{matrix.shape}")
    return matrix


def cmd_build_tree(args) -> int:
    matrix = _load_scores(args.scores)
    rng = np.random.default_rng(args.seed)
    mtree, trace = max_spanning_tree(matrix, args.mode, rng)
    save_tree(args.out, binarize_lcrs(mtree))
    _print({"out": args.out, "n": mtree.n, "log_prob": trace.log_prob})
    return 0


def cmd_gen_data(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        spec = spec_from_dict(json.load(fh))
    os.makedirs(args.out, exist_ok=True)
    paths = {}
    for split in ("train", "test"):
        paths[split] = os.path.join(args.out, f"{split}.json")
        save_dataset(paths[split], generate_dataset(spec, split))
    _print(paths)
    return 0


def cmd_stats(args) -> int:
    pattern = re.compile(r"scene-(.+)\.tree\.json$")
    pairs = []
    for name in sorted(os.listdir(args.trees)):
        match = pattern.match(name)
        if not match:
            continue
        tree = load_tree(os.path.join(args.trees, name))
        label_path = os.path.join(args.trees,
                                  f"scene-{match.group(1)}.labels.json")
        if not os.path.exists(label_path):
            raise ValidationError(f"no labels file next to {name}")
        with open(label_path, encoding="utf-8") as fh:
            labels = json.load(fh)["labels"]
        pairs.append((tree, labels))
    if not pairs:
        raise ValidationError(f"no scene-*.tree.json files under {args.trees}")
    stats = branch_statistics(pairs)
    left, right = category_branches(stats, args.category)
    _print({"category": args.category, "trees": len(pairs),
            "left": dict(sorted(left.items())),
            "right": dict(sorted(right.items()))})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _JsonArgumentParser(prog="vctree")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", default=None,
                   help="artifact directory (default runs/<task>-<structure>-<mode>-seed<seed>)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", required=True,
                   choices=(*SGG_PROTOCOLS, "vqa"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("build-tree", help="spanning tree from a score matrix")
    p.add_argument("--scores", required=True,
                   help='JSON file: a square matrix, bare or under a "scores" key')
    p.add_argument("--mode", required=True, choices=("greedy", "sampled"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_tree)

    p = sub.add_parser("gen-data", help="generate train/test dataset files")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("stats", help="branch statistics for one category")
    p.add_argument("--trees", required=True,
                   help="directory of scene-<id>.tree.json + .labels.json files")
    p.add_argument("--category", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except VCTreeError as err:
        _emit_error(err)
        return 1
    except (OSError, json.JSONDecodeError, KeyError) as err:
        _emit_error(err)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

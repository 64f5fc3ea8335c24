"""Experiment configuration: schema validation, defaults, presets.

A config is plain JSON.  Schema checks catch shape and enum mistakes;
the cross-field rules (which structures support hybrid training, which
protocols belong to which task) live in validate_config because they
relate fields to each other.
"""

from __future__ import annotations

import copy
import json

import jsonschema

from .errors import ConfigError

TASKS = ("sgg", "vqa")
STRUCTURES = ("vctree", "chain", "overlap", "multibranch")
MODES = ("sl", "hl")
SGG_PROTOCOLS = ("predcls", "sgcls", "sggen")
# structures whose trees depend on the learnable scorer, hence the only
# ones policy-gradient training can explore
SCORED_STRUCTURES = ("vctree", "multibranch")

_DIM = {"type": "integer", "minimum": 1}
_DIMS = {"type": "array", "items": _DIM, "minItems": 1}

SCHEMA = {
    "type": "object",
    "required": ["task", "structure", "mode", "seed"],
    "additionalProperties": False,
    "properties": {
        "task": {"enum": list(TASKS)},
        "structure": {"enum": list(STRUCTURES)},
        "mode": {"enum": list(MODES)},
        "seed": {"type": "integer", "minimum": 0},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "generate": {"type": "object"},
                "train": {"type": "string"},
                "test": {"type": "string"},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden": _DIM,
                "label_embed": _DIM,
                "pair_dim": _DIM,
                "pair_hidden": _DIMS,
                "f_hidden": _DIMS,
                "fuse_dim": _DIM,
                "fg_bg_ratio": {"type": "integer", "minimum": 1},
                "max_pairs": {"type": "integer", "minimum": 1},
                "graph_constraint": {"type": "boolean"},
                "token_embed": _DIM,
                "question_dim": _DIM,
                "attend_hidden": _DIMS,
                "gate_hidden": _DIMS,
                "type_embed": _DIM,
                "ablate_context": {"type": "boolean"},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "optimizer": {"enum": ["adam", "sgd"]},
                "rounds": {"type": "integer", "minimum": 0},
                "rl_lr": {"type": "number", "exclusiveMinimum": 0},
                "rl_episodes": {"type": "integer", "minimum": 0},
                "baseline": {"enum": ["self_critic", "moving", "none"]},
                "clip_norm": {"type": "number", "exclusiveMinimum": 0},
                "pretrain_epochs": {"type": "integer", "minimum": 0},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 1},
                "protocols": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"enum": list(SGG_PROTOCOLS) + ["vqa"]},
                },
            },
        },
    },
}

DEFAULTS = {
    "data": {"generate": {}},
    "model": {
        "hidden": 64, "label_embed": 16, "pair_dim": 32, "pair_hidden": [32],
        "f_hidden": [32], "fuse_dim": 32, "fg_bg_ratio": 3, "max_pairs": 64,
        "graph_constraint": True,
        "token_embed": 8, "question_dim": 16, "attend_hidden": [16],
        "gate_hidden": [16], "type_embed": 6, "ablate_context": False,
    },
    "train": {
        "epochs": 2, "lr": 0.01, "optimizer": "adam",
        "rl_lr": 0.02, "rl_episodes": 200, "baseline": "self_critic",
        "clip_norm": 5.0, "pretrain_epochs": 10,
    },
    "eval": {"k": 20},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(doc: dict) -> dict:
    """Schema plus cross-field rules; returns a fully defaulted copy."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as err:
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {err.message}") from None

    cfg = _merge(DEFAULTS, doc)
    if "data" in doc:
        # the data source is chosen wholesale, never blended with the default
        cfg["data"] = copy.deepcopy(doc["data"])

    if cfg["mode"] == "hl" and cfg["structure"] not in SCORED_STRUCTURES:
        raise ConfigError(
            f"hybrid training needs a score-driven structure "
            f"({', '.join(SCORED_STRUCTURES)}), not '{cfg['structure']}'")
    if cfg["mode"] == "sl":
        if cfg["train"].get("rounds", 0) != 0:
            raise ConfigError("mode 'sl' is pure supervised training; "
                              "set rounds to 0 or switch to 'hl'")
        cfg["train"]["rounds"] = 0
    else:
        cfg["train"].setdefault("rounds", 2)
        if cfg["train"]["rounds"] < 1:
            raise ConfigError("mode 'hl' needs at least one reinforce round")

    data = cfg["data"]
    has_paths = "train" in data or "test" in data
    if has_paths and ("train" not in data or "test" not in data):
        raise ConfigError("data paths need both 'train' and 'test'")
    if has_paths and "generate" in data:
        raise ConfigError("give either a generator spec or dataset paths, not both")

    allowed = {"sgg": set(SGG_PROTOCOLS), "vqa": {"vqa"}}[cfg["task"]]
    cfg["eval"].setdefault(
        "protocols", ["predcls"] if cfg["task"] == "sgg" else ["vqa"])
    bad = [p for p in cfg["eval"]["protocols"] if p not in allowed]
    if bad:
        raise ConfigError(f"protocols {bad} do not apply to task '{cfg['task']}'")
    return cfg


def desk_config(task: str, structure: str, mode: str, seed: int = 0,
                **overrides) -> dict:
    """The compact preset every experiment starts from."""
    doc = {"task": task, "structure": structure, "mode": mode, "seed": seed}
    return validate_config(_merge(doc, overrides))


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
    return validate_config(doc)

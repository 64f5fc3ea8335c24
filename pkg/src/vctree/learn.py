"""Hybrid optimization: supervised steps over the task heads, policy
gradient over the structure scorer, and the alternating schedule.

The structure parameters (the "score." group) are updated only by
reinforce_step; every supervised optimizer must exclude them, and
reinforce_step refuses an optimizer that owns anything else.  Rewards are
computed under no_grad so they act as constants in the policy loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError
from .ndcore import backward, clip_grad_inf, no_grad
from .ndcore.tensor import mul_const
from .treebuild import max_spanning_tree, trace_log_prob

THETA_PREFIX = "score"

BASELINES = ("self_critic", "moving", "none")


@dataclass
class Episode:
    sampled: object               # layout drawn from the current policy
    trace: object                 # its construction record
    greedy: object                # argmax layout, None unless self-critic
    reward: float
    baseline: float
    advantage: float
    loss: float                   # -advantage * log pi, 0.0 when skipped
    grad_norm: float              # pre-clip infinity norm over theta
    skipped: bool = False


@dataclass
class MovingBaseline:
    """Exponential reward average, the slower-converging alternative."""
    beta: float = 0.9
    value: float = 0.0
    initialized: bool = False

    def update(self, reward: float) -> None:
        if not self.initialized:
            self.value = reward
            self.initialized = True
        else:
            self.value = self.beta * self.value + (1.0 - self.beta) * reward


def _is_theta(name: str) -> bool:
    return name == THETA_PREFIX or name.startswith(THETA_PREFIX + ".")


def _check_owns_only_theta(optimizer) -> None:
    stray = [n for n in optimizer.names() if not _is_theta(n)]
    if stray:
        raise ConfigError(
            f"policy optimizer may own only '{THETA_PREFIX}.*' parameters, "
            f"found {stray[:3]}")


def _check_owns_no_theta(optimizer) -> None:
    stray = [n for n in optimizer.names() if _is_theta(n)]
    if stray:
        raise ConfigError(
            f"supervised optimizer must not own '{THETA_PREFIX}.*' "
            f"parameters, found {stray[:3]}")


def supervised_step(store, optimizer, loss_fn, context: str = "batch"):
    """One end-task descent step; returns the loss value, or None when the
    batch contributes no loss (all samples skipped)."""
    _check_owns_no_theta(optimizer)
    store.zero_grad()
    loss = loss_fn()
    if loss is None:
        return None
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError(f"non-finite supervised loss on {context}: "
                             f"{loss.data!r}")
    backward(loss)
    optimizer.step()
    return float(loss.data)


def reinforce_step(store, optimizer, score_matrix_fn, reward_fn, rng,
                   baseline: str = "self_critic", moving: MovingBaseline = None,
                   clip_norm: float = 5.0) -> Episode:
    """One Monte-Carlo policy-gradient step on the structure scorer.

    Samples a single layout, scores it with the frozen end task, subtracts
    the baseline, and descends -advantage * log pi.  Degenerate layouts
    (no edges) and zero advantages skip the backward pass outright; the
    gradient is exactly zero in both cases.
    """
    if baseline not in BASELINES:
        raise ConfigError(f"unknown baseline '{baseline}', expected one of {BASELINES}")
    if baseline == "moving" and moving is None:
        raise ConfigError("baseline 'moving' requires a MovingBaseline state")
    _check_owns_only_theta(optimizer)

    sm = score_matrix_fn()
    tree, trace = max_spanning_tree(sm, "sampled", rng)
    with no_grad():
        reward = float(reward_fn(tree))

    greedy = None
    if baseline == "self_critic":
        # same score matrix, hence the same theta snapshot as the sample
        greedy, _ = max_spanning_tree(sm, "greedy")
        with no_grad():
            base = float(reward_fn(greedy))
    elif baseline == "moving":
        base = moving.value if moving.initialized else 0.0
    else:
        base = 0.0

    advantage = reward - base
    if not np.isfinite(advantage):
        raise NonFiniteError(f"non-finite advantage: reward={reward}, baseline={base}")
    if baseline == "moving":
        moving.update(reward)

    if not trace.steps or advantage == 0.0:
        store.zero_grad()
        return Episode(tree, trace, greedy, reward, base, advantage,
                       loss=0.0, grad_norm=0.0, skipped=not trace.steps)

    loss = mul_const(trace_log_prob(trace, sm), -advantage)
    store.zero_grad()
    backward(loss)
    grad_norm = clip_grad_inf(store, store.select(THETA_PREFIX), clip_norm)
    optimizer.step()
    return Episode(tree, trace, greedy, reward, base, advantage,
                   loss=float(loss.data), grad_norm=grad_norm)


def hybrid_schedule(run_supervised, run_reinforce, rounds: int = 2) -> list:
    """Alternation: one supervised phase, then (reinforce, supervised)
    pairs.  rounds=0 degenerates to pure supervised training."""
    if rounds < 0:
        raise ConfigError(f"rounds must be >= 0, got {rounds}")
    log = [{"phase": "supervised", "round": 0, "result": run_supervised(0)}]
    for r in range(1, rounds + 1):
        log.append({"phase": "reinforce", "round": r, "result": run_reinforce(r)})
        log.append({"phase": "supervised", "round": r, "result": run_supervised(r)})
    return log


class StepLog:
    """JSON-lines training log, one record per step."""

    FIELDS = ("phase", "step", "loss", "reward", "baseline", "metric")

    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8")

    def record(self, phase, step, loss=None, reward=None, baseline=None,
               metric=None) -> None:
        rec = {"phase": phase, "step": int(step), "loss": loss,
               "reward": reward, "baseline": baseline, "metric": metric}
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.flush()
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

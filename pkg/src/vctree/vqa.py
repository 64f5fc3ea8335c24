"""Question-answering head: GRU question encoding, dual attention over
visual and tree-context features, question-guided gated fusion, and
soft-label answer classification.

Parameters live under "vqa.".  The tree-scoring parameters are a separate
group: the structure is a discrete input here, so no answer gradient can
reach them.
"""

from dataclasses import dataclass

import numpy as np

from .encoder import bitreelstm
from .errors import ValidationError
from .fusion import fuse
from .ndcore import (Tensor, concat, dense, gru_cell, matmul, mlp, mul,
                     reshape, row, sigmoid, soft_cross_entropy, softmax,
                     stack_rows)
from .scoring import proposal_feature

VQA_PREFIX = "vqa"


@dataclass
class VqaConfig:
    vocab_size: int
    num_answers: int
    num_question_types: int
    token_embed: int = 8
    question_dim: int = 16
    hidden: int = 8               # tree context per direction
    fuse_dim: int = 16            # joint feature width
    attend_hidden: tuple = (12,)
    gate_hidden: tuple = (16,)
    type_embed: int = 6
    ablate_context: bool = False  # zero the context attention branch


@dataclass
class Question:
    tokens: list
    qtype: int
    answers: np.ndarray           # soft targets over the answer vocabulary

    def __post_init__(self):
        self.answers = np.asarray(self.answers, dtype=np.float64)
        if self.answers.ndim != 1:
            raise ValidationError(f"answer targets must be 1-d, got shape {self.answers.shape}")
        if self.answers.min() < 0 or self.answers.max() > 1:
            raise ValidationError("answer targets must lie in [0, 1]")


@dataclass
class AttentionResult:
    weights: Tensor               # simplex over the n objects
    joint: Tensor                 # fused multimodal feature


def type_one_hot(qtype: int, num_types: int) -> np.ndarray:
    if not 0 <= qtype < num_types:
        raise ValidationError(f"question type {qtype} outside 0..{num_types - 1}")
    v = np.zeros(num_types)
    v[qtype] = 1.0
    return v


def encode_question(store, tokens, cfg: VqaConfig) -> Tensor:
    """Final hidden state of a one-layer GRU over learned embeddings."""
    if not tokens:
        raise ValidationError("encode_question: empty token list")
    emb = store.param("vqa.q.embed", (cfg.vocab_size, cfg.token_embed))
    h = Tensor(np.zeros(cfg.question_dim))
    for t in tokens:
        if not 0 <= t < cfg.vocab_size:
            raise ValidationError(f"token {t} outside the {cfg.vocab_size}-word vocabulary")
        h = gru_cell(store, "vqa.q.gru", row(emb, int(t)), h)
    return h


def context_features(store, proposals, tree, cfg: VqaConfig) -> list:
    """d_i^q: tree context encoded directly from the object features."""
    inputs = [Tensor(proposal_feature(p)) for p in proposals]
    return bitreelstm(store, "vqa.ctx", tree, inputs, cfg.hidden)


def attend(store, name: str, features, q: Tensor, cfg: VqaConfig) -> AttentionResult:
    """Soft attention over a feature set, then fusion with the question.

    u_i comes from an MLP on the fused (feature, question) pair; the
    attended feature fuses with the question again for the joint output.
    """
    if not features:
        raise ValidationError("attend: empty feature set")
    z = stack_rows(features)
    fused = fuse(store, f"{name}.fuse", z, q, cfg.fuse_dim)
    u = mlp(store, f"{name}.score", fused, [*cfg.attend_hidden, 1])
    alpha = softmax(reshape(u, (len(features),)))
    zhat = matmul(alpha, z)
    joint = fuse(store, f"{name}.joint", zhat, q, cfg.fuse_dim)
    return AttentionResult(alpha, joint)


def question_gate(store, q: Tensor, type_vec, cfg: VqaConfig) -> Tensor:
    """Channel gate over the concatenated joint features, driven by the
    question encoding and its embedded one-hot type."""
    t = np.asarray(type_vec, dtype=np.float64)
    ones = np.flatnonzero(t == 1.0)
    if t.ndim != 1 or len(t) != cfg.num_question_types or len(ones) != 1 \
            or not np.all((t == 0.0) | (t == 1.0)):
        raise ValidationError("question_gate: type vector must be one-hot")
    w5 = store.param("vqa.gate.type.W", (cfg.type_embed, cfg.num_question_types))
    z = concat([q, matmul(w5, Tensor(t))])
    return sigmoid(mlp(store, "vqa.gate.mlp", z, [*cfg.gate_hidden, 2 * cfg.fuse_dim]))


def vqa_logits(store, visual, context, q: Tensor, type_vec, cfg: VqaConfig) -> Tensor:
    """Answer logits from gated dual attention.

    The ablated configuration zeroes the context branch without creating
    its parameters, so the two models differ only in that channel.
    """
    m_x = attend(store, "vqa.att.x", visual, q, cfg).joint
    if cfg.ablate_context:
        m_d = Tensor(np.zeros(cfg.fuse_dim))
    else:
        if context is None:
            raise ValidationError("vqa_logits: context features required unless ablated")
        m_d = attend(store, "vqa.att.d", context, q, cfg).joint
    gate = question_gate(store, q, type_vec, cfg)
    final = mul(gate, concat([m_x, m_d]))
    return dense(store, "vqa.out", final, cfg.num_answers)


def vqa_forward(store, proposals, tree, question: Question, cfg: VqaConfig) -> Tensor:
    """End-to-end logits for one question over one scene."""
    q = encode_question(store, question.tokens, cfg)
    visual = [Tensor(proposal_feature(p)) for p in proposals]
    context = None if cfg.ablate_context else context_features(store, proposals, tree, cfg)
    return vqa_logits(store, visual, context, q,
                      type_one_hot(question.qtype, cfg.num_question_types), cfg)


def answer_loss(logits: Tensor, soft_targets):
    """Soft cross-entropy; a zero-mass target skips the sample (None)."""
    t = np.asarray(soft_targets, dtype=np.float64)
    if t.min() < 0 or t.max() > 1:
        raise ValidationError("answer targets must lie in [0, 1]")
    if t.sum() <= 0.0:
        return None
    return soft_cross_entropy(logits, t)


def answer_score(logits_data, soft_targets) -> float:
    """Evaluation convention: the soft-target mass of the argmax answer."""
    return float(np.asarray(soft_targets)[int(np.argmax(logits_data))])

"""Prompt-text matched supervision.

Each sample gets a templated class description; its embedded supervision is
paired with the content prompt as a positive, and two mined negatives are
added per sample: a wrong-class text for each prompt and a wrong-class
prompt for each text. Negatives are sampled from the softmax of cosine
similarities at temperature 0.07, restricted to opposite-label candidates —
with a two-class template, a same-label text is string-identical to the
positive and would poison the match labels. A two-logit head scores every
query row of each joint pair; logits are averaged over queries before the
cross-entropy against the match labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import Linear

MINING_TAU = 0.07

_DESCRIPTIONS = {
    1: "a photo of a live face.",
    0: "a photo of a fake face.",
}


@dataclass
class MatchBatch:
    """Joint prompt-text pairs: B positives then 2B mined negatives."""

    joint: Tensor       # [3B, N, 2d]
    labels: np.ndarray  # [3B], 1 = matched


def render_descriptions(labels) -> list[str]:
    out = []
    for label in np.asarray(labels).tolist():
        if label not in _DESCRIPTIONS:
            raise ValueError(f"label must be 0 (spoof) or 1 (live), got {label}")
        out.append(_DESCRIPTIONS[label])
    return out


def text_supervision(embedded: Tensor, query_count: int) -> Tensor:
    """Mean over the token axis, replicated to one row per query: [B, N, d]."""
    b, tokens, d = embedded.shape
    if query_count > tokens:
        raise ValueError(f"query_count {query_count} exceeds token count {tokens}")
    pooled = ag.mean(embedded, axis=1, keepdims=True)
    return ag.broadcast_to(pooled, (b, query_count, d))


def sample_negatives(sim: np.ndarray, labels: np.ndarray,
                     rng: np.random.Generator, tau: float = MINING_TAU
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Sample opposite-label indices with probability softmax(sim / tau).

    ``sim[i, j]`` scores prompt i against text j. Returns, per sample, the
    mined negative text for each prompt and the mined negative prompt for
    each text.
    """
    labels = np.asarray(labels)
    b = labels.shape[0]
    if sim.shape != (b, b):
        raise ValueError(f"similarity must be [{b}, {b}], got {sim.shape}")
    if len(np.unique(labels)) < 2:
        raise ValueError("negative mining needs both classes in the batch")

    def draw(scores: np.ndarray, eligible: np.ndarray) -> int:
        logits = scores[eligible].astype(np.float64) / tau
        logits -= logits.max()
        probs = np.exp(logits)
        probs /= probs.sum()
        return int(rng.choice(eligible, p=probs))

    neg_text = np.empty(b, dtype=np.int64)
    neg_prompt = np.empty(b, dtype=np.int64)
    for i in range(b):
        eligible = np.flatnonzero(labels != labels[i])
        neg_text[i] = draw(sim[i, :], eligible)
    for j in range(b):
        eligible = np.flatnonzero(labels != labels[j])
        neg_prompt[j] = draw(sim[:, j], eligible)
    return neg_text, neg_prompt


def mine_hard_negatives(prompts: Tensor, supervision: Tensor, labels,
                        rng: np.random.Generator, tau: float = MINING_TAU
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Cosine-similarity mining over query-pooled features (no grad flow)."""
    p = prompts.data.mean(axis=1)
    s = supervision.data.mean(axis=1)
    p = p / np.maximum(np.linalg.norm(p, axis=1, keepdims=True), 1e-12)
    s = s / np.maximum(np.linalg.norm(s, axis=1, keepdims=True), 1e-12)
    return sample_negatives(p @ s.T, np.asarray(labels), rng, tau)


def build_joint_pairs(prompts: Tensor, supervision: Tensor,
                      neg_text_idx: np.ndarray, neg_prompt_idx: np.ndarray) -> MatchBatch:
    b = prompts.shape[0]
    for idx in (neg_text_idx, neg_prompt_idx):
        idx = np.asarray(idx)
        if idx.shape != (b,) or idx.min() < 0 or idx.max() >= b:
            raise ValueError("negative indices must be valid batch positions")
    positives = ag.concatenate([prompts, supervision], axis=2)
    prompt_negatives = ag.concatenate(
        [prompts, ag.index_select(supervision, neg_text_idx)], axis=2)
    text_negatives = ag.concatenate(
        [ag.index_select(prompts, neg_prompt_idx), supervision], axis=2)
    joint = ag.concatenate([positives, prompt_negatives, text_negatives], axis=0)
    labels = np.concatenate([np.ones(b, dtype=np.int64), np.zeros(2 * b, dtype=np.int64)])
    return MatchBatch(joint=joint, labels=labels)


def ptm_loss(batch: MatchBatch, head: Linear) -> Tensor:
    """Per-query logits from the match head, averaged, then cross-entropy."""
    logits = ag.mean(head(batch.joint), axis=1)  # [3B, 2]
    return ag.cross_entropy(logits, batch.labels)

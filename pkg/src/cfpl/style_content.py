"""Style and content features from encoder layers, plus style-statistic mixing.

Style is summarized per layer by the token-axis mean and population std of
the spatial tokens (class token excluded), concatenated to a [B, 2d] vector
and averaged across layers. Content is the final layer's tokens normalized
by their own token-axis statistics (all tokens, so the normalized mean is
exactly zero per channel).

Mixing replaces each layer's statistics with a convex combination against a
batch-shuffled partner, weighted per sample by Beta(alpha, alpha) draws.
One permutation and one weight vector are drawn per batch and shared across
layers; mixing happens before the cross-layer average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import DspConfig
from .encoders import EncoderOutput

STAT_EPS = 1e-5


@dataclass
class StyleStats:
    mu: Tensor     # [B, d]
    sigma: Tensor  # [B, d], >= sqrt(STAT_EPS) elementwise


@dataclass
class DspPlan:
    """One batch's mixing decision, replayable for deterministic re-runs."""

    fired: bool
    perm: np.ndarray | None = None  # [B]
    lam: np.ndarray | None = None   # [B, 1]


def draw_dsp_plan(dsp: DspConfig, batch_size: int, rng: np.random.Generator) -> DspPlan:
    dsp.validate()
    if not dsp.active or rng.uniform() >= dsp.p:
        return DspPlan(fired=False)
    perm = rng.permutation(batch_size)
    lam = rng.beta(dsp.alpha, dsp.alpha, size=(batch_size, 1))
    return DspPlan(fired=True, perm=perm, lam=lam)


def token_stats(tokens: Tensor) -> StyleStats:
    """Token-axis mean and eps-stabilized population std of [B, n, d] tokens."""
    mu = ag.mean(tokens, axis=1)
    centered = tokens - ag.mean(tokens, axis=1, keepdims=True)
    var = ag.mean(centered * centered, axis=1)
    return StyleStats(mu=mu, sigma=ag.sqrt(var + STAT_EPS))


def mix_statistics(stats: StyleStats, perm: np.ndarray, lam) -> StyleStats:
    """Convex mix of statistics with their batch-permuted counterparts."""
    perm = np.asarray(perm)
    b = stats.mu.shape[0]
    if sorted(perm.tolist()) != list(range(b)):
        raise ValueError("perm must be a bijection over batch indices")
    lam_t = lam if isinstance(lam, Tensor) else Tensor._wrap(
        np.asarray(lam, dtype=stats.mu.dtype).reshape(b, 1))
    if np.any(lam_t.data < 0) or np.any(lam_t.data > 1):
        raise ValueError("lambda weights must lie in [0, 1]")
    mu_ref = ag.index_select(stats.mu, perm)
    sigma_ref = ag.index_select(stats.sigma, perm)
    one_minus = 1.0 - lam_t
    return StyleStats(
        mu=lam_t * stats.mu + one_minus * mu_ref,
        sigma=lam_t * stats.sigma + one_minus * sigma_ref,
    )


def style_feature(out: EncoderOutput, dsp: DspConfig | None = None,
                  rng: np.random.Generator | None = None,
                  plan: DspPlan | None = None) -> Tensor:
    """Cross-layer average of per-layer [mean || std] statistics, [B, 2d]."""
    if out.layers < 1:
        raise ValueError("encoder output has no layers")
    if plan is None:
        if dsp is not None and dsp.active:
            if rng is None:
                raise ValueError("an rng is required while mixing is active")
            plan = draw_dsp_plan(dsp, out.layer_tokens[0].shape[0], rng)
        else:
            plan = DspPlan(fired=False)

    total: Tensor | None = None
    for tokens in out.layer_tokens:
        stats = token_stats(tokens[:, 1:, :])  # spatial tokens only
        if plan.fired:
            stats = mix_statistics(stats, plan.perm, plan.lam)
        layer_feature = ag.concatenate([stats.mu, stats.sigma], axis=1)
        total = layer_feature if total is None else total + layer_feature
    return total * (1.0 / out.layers)


def content_feature(out: EncoderOutput) -> Tensor:
    """Final-layer tokens normalized by their own token-axis statistics."""
    if out.layers < 1:
        raise ValueError("encoder output has no layers")
    tokens = out.layer_tokens[-1]
    mu = ag.mean(tokens, axis=1, keepdims=True)
    centered = tokens - mu
    var = ag.mean(centered * centered, axis=1, keepdims=True)
    return centered / ag.sqrt(var + STAT_EPS)

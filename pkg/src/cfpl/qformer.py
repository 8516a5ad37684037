"""Query transformer: learnable queries attending to visual features.

Each block applies, with pre-layernorm and a residual around every stage:
self-attention among the queries, cross-attention from queries to the
source sequence (which has its own layernorm and may be wider than the
queries, e.g. the [mean || std] style vector), and a 2-layer GELU MLP.

Two instances with separate weights serve the content path (source = final
layer tokens, width d) and the style path (source = one token of width 2d).
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .config import QFormerConfig
from .nn import Attention, LayerNorm, Mlp, Module, trunc_normal


class QFormerBlock(Module):
    def __init__(self, cfg: QFormerConfig, rng: np.random.Generator):
        d = cfg.width
        self.ln_self = LayerNorm(d)
        self.self_attn = Attention(d, cfg.heads, rng)
        self.ln_query = LayerNorm(d)
        self.ln_source = LayerNorm(cfg.source_dim)
        self.cross_attn = Attention(d, cfg.heads, rng, source_dim=cfg.source_dim)
        self.ln_mlp = LayerNorm(d)
        self.mlp = Mlp(d, cfg.mlp_ratio, rng)

    def __call__(self, x: Tensor, source: Tensor) -> Tensor:
        h = self.ln_self(x)
        x = x + self.self_attn(h, h)
        x = x + self.cross_attn(self.ln_query(x), self.ln_source(source))
        return x + self.mlp(self.ln_mlp(x))


class QFormer(Module):
    def __init__(self, cfg: QFormerConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.queries = Parameter(trunc_normal(rng, (cfg.query_count, cfg.width)))
        self.blocks = [QFormerBlock(cfg, rng) for _ in range(cfg.depth)]

    def __call__(self, source: Tensor) -> Tensor:
        return qformer_forward(self, source)


def qformer_forward(qf: QFormer, source: Tensor) -> Tensor:
    """Produce prompts [B, N, d] from a source sequence [B, m, source_dim]."""
    cfg = qf.cfg
    if source.ndim != 3 or source.shape[2] != cfg.source_dim:
        raise ValueError(f"expected source [B, m, {cfg.source_dim}], got {source.shape}")
    if source.shape[1] < 1:
        raise ValueError("source must contain at least one token")
    b = source.shape[0]
    x = ag.broadcast_to(
        ag.reshape(qf.queries.tensor, (1, cfg.query_count, cfg.width)),
        (b, cfg.query_count, cfg.width))
    for block in qf.blocks:
        x = block(x, source)
    return x

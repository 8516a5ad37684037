"""Channel gating of the visual feature by prompt-derived text features.

A squeeze-excitation style bottleneck (no biases) maps the concatenated
content/style text features to per-channel sigmoid weights; the weighted
visual feature feeds a two-class linear head. The ablation variant replaces
the gate with the plain mean of the two text features.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .nn import Linear, Module, trunc_normal


class GateParams(Module):
    """Bottleneck weights: [d/r, 2d] then [d, d/r], stored rows-out."""

    def __init__(self, width: int, rng: np.random.Generator, reduction: int = 16):
        if width % reduction != 0:
            raise ValueError(f"width {width} not divisible by reduction {reduction}")
        hidden = width // reduction
        self.w1 = Parameter(trunc_normal(rng, (hidden, 2 * width)))
        self.w2 = Parameter(trunc_normal(rng, (width, hidden)))
        self.reduction = reduction


def modulation_factors(t_content: Tensor, t_style: Tensor, gate: GateParams) -> Tensor:
    """sigmoid(W2 relu(W1 [t_c || t_s])), elementwise in (0, 1)."""
    t = ag.concatenate([t_content, t_style], axis=1)
    hidden = ag.relu(ag.matmul(t, ag.transpose(gate.w1.tensor, (1, 0))))
    return ag.sigmoid(ag.matmul(hidden, ag.transpose(gate.w2.tensor, (1, 0))))


def mean_modulation(t_content: Tensor, t_style: Tensor) -> Tensor:
    """Ablation variant: channel weights are the mean of the text features."""
    return (t_content + t_style) * 0.5


def modulate_and_classify(visual: Tensor, weights: Tensor,
                          head: Linear) -> tuple[Tensor, Tensor]:
    """Scale the visual feature per channel and classify live vs spoof."""
    modulated = visual * weights
    return modulated, head(modulated)


def total_loss(loss_cls: Tensor, loss_ptm: Tensor) -> Tensor:
    for name, loss in (("classification", loss_cls), ("matching", loss_ptm)):
        if not math.isfinite(float(loss.data)):
            raise ValueError(f"{name} loss is non-finite")
    return loss_cls + loss_ptm

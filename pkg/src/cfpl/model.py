"""End-to-end model: encoders -> style/content -> query transformers -> losses.

The image tower, both query transformers, the match head, the gate, and the
classifier train; the text tower is frozen. Randomness consumed inside a
training forward (style-mixing draws, mined negative indices) is returned
as a replayable record so the same forward can be re-evaluated as a pure
function of the parameters, which the finite-difference checker needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import RunConfig
from .encoders import ImageEncoder, TextEncoder, embed_text
from .modulation import (GateParams, mean_modulation, modulate_and_classify,
                         modulation_factors, total_loss)
from .nn import Linear, Module
from .ptm import (build_joint_pairs, mine_hard_negatives, ptm_loss,
                  render_descriptions, text_supervision)
from .qformer import QFormer
from .style_content import DspPlan, content_feature, draw_dsp_plan, style_feature


@dataclass
class StepRandomness:
    """Everything random inside one training forward, for exact replay."""

    dsp: DspPlan
    neg_text_idx: np.ndarray | None = None
    neg_prompt_idx: np.ndarray | None = None


@dataclass
class StepLosses:
    total: Tensor
    cls: Tensor
    ptm: Tensor | None
    randomness: StepRandomness


class CfplModel(Module):
    def __init__(self, config: RunConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        enc_cfg = config.encoder_config()
        self.image_encoder = ImageEncoder(enc_cfg, rng)
        self.text_encoder = TextEncoder(enc_cfg, rng)
        self.cqf = QFormer(config.cqf_config(), rng)
        self.sqf = QFormer(config.sqf_config(), rng)
        self.gate = GateParams(config.width, rng, reduction=config.reduction)
        self.match_head = Linear(2 * config.width, 2, rng)
        self.cls_head = Linear(config.width, 2, rng)

    # -- pieces ----------------------------------------------------------

    def prompts(self, encoded, dsp_plan: DspPlan) -> tuple[Tensor, Tensor]:
        """Content and style prompts for an encoded batch."""
        v_content = content_feature(encoded)
        v_style = style_feature(encoded, plan=dsp_plan)
        b = v_style.shape[0]
        prompt_c = self.cqf(v_content)
        prompt_s = self.sqf(ag.reshape(v_style, (b, 1, 2 * self.config.width)))
        return prompt_c, prompt_s

    def classification_logits(self, visual: Tensor, prompt_c: Tensor | None,
                              prompt_s: Tensor | None) -> Tensor:
        if not self.config.pm:
            return self.cls_head(visual)
        t_c = self.text_encoder.encode_prompt(prompt_c)
        t_s = self.text_encoder.encode_prompt(prompt_s)
        if self.config.modulation == "gate":
            weights = modulation_factors(t_c, t_s, self.gate)
        else:
            weights = mean_modulation(t_c, t_s)
        _, logits = modulate_and_classify(visual, weights, self.cls_head)
        return logits

    # -- training forward --------------------------------------------------

    def forward_train(self, images: Tensor, labels: np.ndarray,
                      dsp_rng: np.random.Generator | None = None,
                      mining_rng: np.random.Generator | None = None,
                      replay: StepRandomness | None = None) -> StepLosses:
        cfg = self.config
        labels = np.asarray(labels)
        encoded = self.image_encoder.encode(images)
        need_prompts = cfg.pm or cfg.ptm

        prompt_c = prompt_s = None
        if need_prompts:
            if replay is not None:
                plan = replay.dsp
            else:
                plan = draw_dsp_plan(cfg.dsp_config(), images.shape[0], dsp_rng)
            prompt_c, prompt_s = self.prompts(encoded, plan)
        else:
            plan = DspPlan(fired=False)

        loss_ptm = None
        neg_text = neg_prompt = None
        if cfg.ptm:
            supervision_raw = embed_text(self.text_encoder, render_descriptions(labels))
            supervision = text_supervision(supervision_raw, cfg.query_count)
            if replay is not None:
                neg_text, neg_prompt = replay.neg_text_idx, replay.neg_prompt_idx
            else:
                neg_text, neg_prompt = mine_hard_negatives(
                    prompt_c, supervision, labels, mining_rng)
            match_batch = build_joint_pairs(prompt_c, supervision, neg_text, neg_prompt)
            loss_ptm = ptm_loss(match_batch, self.match_head)

        logits = self.classification_logits(encoded.global_feature, prompt_c, prompt_s)
        loss_cls = ag.cross_entropy(logits, labels)
        total = total_loss(loss_cls, loss_ptm) if loss_ptm is not None else loss_cls
        return StepLosses(
            total=total, cls=loss_cls, ptm=loss_ptm,
            randomness=StepRandomness(dsp=plan, neg_text_idx=neg_text,
                                      neg_prompt_idx=neg_prompt))

    # -- inference ----------------------------------------------------------

    def score(self, images: Tensor) -> np.ndarray:
        """Per-sample liveness probability in [0, 1]; mixing disabled."""
        with ag.no_grad():
            encoded = self.image_encoder.encode(images)
            if self.config.pm:
                prompt_c, prompt_s = self.prompts(encoded, DspPlan(fired=False))
            else:
                prompt_c = prompt_s = None
            logits = self.classification_logits(encoded.global_feature, prompt_c, prompt_s)
            probs = ag.softmax(logits, axis=1)
        return probs.data[:, 1].astype(np.float64)

    # -- parameter grouping ---------------------------------------------------

    def parameter_groups(self) -> dict[str, list]:
        """Trainable parameters by subsystem (queries split out on their own)."""
        groups: dict[str, list] = {
            "image_encoder": [], "cqf": [], "sqf": [],
            "queries": [], "fc_ptm": [], "fc_cls": [], "gate": [],
        }
        for name, p in self.named_parameters():
            if p.frozen:
                continue
            if name.endswith("queries"):
                groups["queries"].append(p)
            elif name.startswith("image_encoder."):
                groups["image_encoder"].append(p)
            elif name.startswith("cqf."):
                groups["cqf"].append(p)
            elif name.startswith("sqf."):
                groups["sqf"].append(p)
            elif name.startswith("match_head."):
                groups["fc_ptm"].append(p)
            elif name.startswith("cls_head."):
                groups["fc_cls"].append(p)
            elif name.startswith("gate."):
                groups["gate"].append(p)
        return groups


def build_model(config: RunConfig, seed: int | None = None) -> CfplModel:
    """Construct a model with seed-deterministic initialization."""
    seed = config.seed if seed is None else seed
    init_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=(seed, 0xC0DE))))
    if config.precision == "float64":
        with ag.precision(np.float64):
            return CfplModel(config, init_rng)
    with ag.precision(np.float32):
        return CfplModel(config, init_rng)

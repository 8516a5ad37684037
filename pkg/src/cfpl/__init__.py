"""Class-free prompt learning for cross-domain face anti-spoofing.

A self-contained implementation: numpy-backed reverse-mode autodiff, a
small ViT image tower with per-layer features, a frozen text tower, content
and style query transformers, prompt-text matched supervision with hard
negative mining, style-statistic mixing, prompt modulation of the visual
feature, a deterministic trainer, biometric metrics, and cross-domain
protocols over synthetic multi-domain data.
"""

from .autograd import Parameter, Tensor, finite_diff_gradcheck
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (DspConfig, EncoderConfig, QFormerConfig, RunConfig,
                     default_config, tiny_config)
from .encoders import (EncoderOutput, ImageEncoder, TextEncoder, embed_text,
                       encode_image, encode_prompt)
from .metrics import ScoreSet, accuracy, auc, hter, roc_curve, tpr_at_fpr
from .model import CfplModel, build_model
from .modulation import (GateParams, mean_modulation, modulate_and_classify,
                         modulation_factors, total_loss)
from .ptm import (MatchBatch, build_joint_pairs, mine_hard_negatives,
                  ptm_loss, render_descriptions, text_supervision)
from .protocol import ProtocolSpec, leave_one_out, parse_protocol_spec, sweep
from .qformer import QFormer, qformer_forward
from .style_content import (DspPlan, StyleStats, content_feature,
                            mix_statistics, style_feature)
from .synth import synth_dataset
from .trainer import evaluate_model, evaluate_scores, grad_check_model, train

__version__ = "0.1.0"

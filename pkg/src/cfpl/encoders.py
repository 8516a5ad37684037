"""Image and text towers.

The image encoder is a small ViT that exposes every layer's token tensor —
the per-layer statistics feed the style path, the final layer feeds the
content path, and the final class token is the global visual feature.

The text tower mirrors the usual dual-encoder layout (causal transformer,
final layernorm, linear projection, feature read at the last prompt
position) but is randomly initialized and permanently frozen: it shapes
gradients for the prompts flowing through it without learning anything
itself.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .config import EncoderConfig
from .nn import LayerNorm, Linear, Module, TransformerBlock, trunc_normal


@dataclass
class EncoderOutput:
    """Per-layer token tensors plus the final class-token feature."""

    layer_tokens: list[Tensor]  # L tensors of [B, n, d]
    global_feature: Tensor      # [B, d]

    @property
    def layers(self) -> int:
        return len(self.layer_tokens)


class ImageEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        patch_dim = 3 * cfg.patch_size ** 2
        self.patch_embed = Linear(patch_dim, cfg.width, rng)
        self.class_token = Parameter(trunc_normal(rng, (1, 1, cfg.width)))
        self.positional = Parameter(trunc_normal(rng, (cfg.token_count, cfg.width)))
        self.blocks = [
            TransformerBlock(cfg.width, cfg.heads, cfg.mlp_ratio, rng)
            for _ in range(cfg.image_layers)
        ]

    def _patchify(self, images: Tensor) -> Tensor:
        b = images.shape[0]
        p = self.cfg.patch_size
        g = self.cfg.image_size // p
        x = ag.reshape(images, (b, 3, g, p, g, p))
        x = ag.transpose(x, (0, 2, 4, 1, 3, 5))
        return ag.reshape(x, (b, g * g, 3 * p * p))

    def encode(self, images: Tensor) -> EncoderOutput:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected images [B, 3, H, W], got {images.shape}")
        if images.shape[2] != self.cfg.image_size or images.shape[3] != self.cfg.image_size:
            raise ValueError(
                f"expected {self.cfg.image_size}x{self.cfg.image_size} input, "
                f"got {images.shape[2]}x{images.shape[3]}")
        b = images.shape[0]
        tokens = self.patch_embed(self._patchify(images))
        cls = ag.broadcast_to(self.class_token.tensor, (b, 1, self.cfg.width))
        x = ag.concatenate([cls, tokens], axis=1) + self.positional.tensor
        layer_tokens = []
        for block in self.blocks:
            x = block(x)
            layer_tokens.append(x)
        return EncoderOutput(layer_tokens, x[:, 0, :])


def encode_image(encoder: ImageEncoder, images: Tensor) -> EncoderOutput:
    return encoder.encode(images)


# -- text side ------------------------------------------------------------

PAD, START, END = "<pad>", "<start>", "<end>"
VOCAB = [PAD, START, END, ".", "a", "face", "fake", "live", "of", "photo"]
_TOKEN_RE = re.compile(r"[a-z']+|[.,!?;:]")


class TemplateTokenizer:
    """Word-level tokenizer over the closed description vocabulary."""

    def __init__(self, context_length: int = 77):
        self.context_length = context_length
        self.vocab = list(VOCAB)
        self.token_to_id = {t: i for i, t in enumerate(self.vocab)}
        self.pad_id = self.token_to_id[PAD]
        self.start_id = self.token_to_id[START]
        self.end_id = self.token_to_id[END]

    def tokenize(self, text: str) -> list[int]:
        ids = []
        for token in _TOKEN_RE.findall(text.lower()):
            if token not in self.token_to_id:
                raise ValueError(f"token {token!r} not in the template vocabulary")
            ids.append(self.token_to_id[token])
        return ids

    def encode(self, descriptions: list[str]) -> np.ndarray:
        """Encode to [B, context] int ids with start/end markers and padding."""
        limit = self.context_length - 2
        rows = []
        for text in descriptions:
            content = self.tokenize(text)
            if len(content) > limit:
                raise ValueError(f"description has {len(content)} tokens, limit is {limit}")
            row = [self.start_id] + content + [self.end_id]
            row += [self.pad_id] * (self.context_length - len(row))
            rows.append(row)
        return np.asarray(rows, dtype=np.int64)


class TextEncoder(Module):
    """Frozen causal transformer mapping prompts or token ids to features."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.tokenizer = TemplateTokenizer(cfg.context_length)
        vocab = len(self.tokenizer.vocab)
        self.token_embedding = Parameter(trunc_normal(rng, (vocab, cfg.width)), frozen=True)
        self.positional = Parameter(trunc_normal(rng, (cfg.context_length, cfg.width)), frozen=True)
        self.blocks = [
            TransformerBlock(cfg.width, cfg.heads, cfg.mlp_ratio, rng, causal=True, frozen=True)
            for _ in range(cfg.text_layers)
        ]
        self.ln_final = LayerNorm(cfg.width, frozen=True)
        self.projection = Parameter(trunc_normal(rng, (cfg.width, cfg.width)), frozen=True)

    def embed(self, token_ids: np.ndarray) -> Tensor:
        # Pure lookup into frozen tables; the result carries no gradient.
        data = self.token_embedding.data[token_ids] + self.positional.data[None, :, :]
        return Tensor._wrap(data)

    def encode_prompt(self, prompt: Tensor) -> Tensor:
        if prompt.ndim != 3 or prompt.shape[2] != self.cfg.width:
            raise ValueError(f"expected prompt [B, N, {self.cfg.width}], got {prompt.shape}")
        n = prompt.shape[1]
        if n > self.cfg.context_length:
            raise ValueError(f"prompt length {n} exceeds context length {self.cfg.context_length}")
        # Positions >= n are zero padding; under the causal mask they cannot
        # influence the position n-1 output, so the forward skips them.
        x = prompt + Tensor._wrap(self.positional.data[:n])
        for block in self.blocks:
            x = block(x)
        x = self.ln_final(x)
        return ag.matmul(x[:, n - 1, :], self.projection.tensor)


def embed_text(text_encoder: TextEncoder, descriptions: list[str]) -> Tensor:
    """Token + positional embeddings for template descriptions, [B, 77, d]."""
    if not descriptions:
        raise ValueError("descriptions must be a nonempty list")
    return text_encoder.embed(text_encoder.tokenizer.encode(descriptions))


def encode_prompt(text_encoder: TextEncoder, prompt: Tensor) -> Tensor:
    """Run prompt vectors through the frozen text tower, yielding [B, d]."""
    return text_encoder.encode_prompt(prompt)

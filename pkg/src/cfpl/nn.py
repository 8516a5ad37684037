"""Module system and the transformer building blocks shared by all towers."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 bound: float = 2.0) -> np.ndarray:
    """Truncated normal init: resample draws outside +/- bound sigmas."""
    out = rng.standard_normal(size=shape)
    while True:
        mask = np.abs(out) > bound
        n_bad = int(mask.sum())
        if n_bad == 0:
            break
        out[mask] = rng.standard_normal(size=n_bad)
    return out * std


class Module:
    """Minimal parameter container; children are discovered by attribute walk."""

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            if isinstance(value, Parameter):
                value.name = prefix + attr
                yield value.name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + attr + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if not p.frozen]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True, frozen: bool = False, std: float = 0.02):
        self.weight = Parameter(trunc_normal(rng, (in_dim, out_dim), std), frozen=frozen)
        self.bias = Parameter(np.zeros(out_dim), frozen=frozen) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ag.matmul(x, self.weight.tensor)
        if self.bias is not None:
            y = y + self.bias.tensor
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, frozen: bool = False):
        self.gain = Parameter(np.ones(dim), frozen=frozen)
        self.bias = Parameter(np.zeros(dim), frozen=frozen)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layernorm(x, self.gain.tensor, self.bias.tensor, self.eps)


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return ag.transpose(ag.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, t, hd = x.shape
    return ag.reshape(ag.transpose(x, (0, 2, 1, 3)), (b, t, h * hd))


_MASK_CACHE: dict[tuple[int, str], np.ndarray] = {}


def _causal_mask(t: int, dtype: np.dtype) -> np.ndarray:
    key = (t, np.dtype(dtype).str)
    mask = _MASK_CACHE.get(key)
    if mask is None:
        mask = np.triu(np.full((t, t), -1e9, dtype=dtype), k=1)
        _MASK_CACHE[key] = mask
    return mask


class Attention(Module):
    """Multi-head attention; the key/value side may have its own width."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 source_dim: int | None = None, frozen: bool = False):
        if dim % heads != 0:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        source_dim = dim if source_dim is None else source_dim
        self.heads = heads
        self.scale = 1.0 / np.sqrt(dim // heads)
        self.query = Linear(dim, dim, rng, frozen=frozen)
        self.key = Linear(source_dim, dim, rng, frozen=frozen)
        self.value = Linear(source_dim, dim, rng, frozen=frozen)
        self.out = Linear(dim, dim, rng, frozen=frozen)

    def __call__(self, query: Tensor, source: Tensor, causal: bool = False) -> Tensor:
        q = split_heads(self.query(query), self.heads)
        k = split_heads(self.key(source), self.heads)
        v = split_heads(self.value(source), self.heads)
        scores = ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))) * self.scale
        if causal:
            if query.shape[1] != source.shape[1]:
                raise ValueError("causal attention requires equal query/source lengths")
            scores = scores + Tensor._wrap(_causal_mask(query.shape[1], scores.dtype))
        attn = ag.softmax(scores, axis=-1)
        return self.out(merge_heads(ag.matmul(attn, v)))


class Mlp(Module):
    """Two linear layers with a GELU in between."""

    def __init__(self, dim: int, ratio: int, rng: np.random.Generator, frozen: bool = False):
        self.fc1 = Linear(dim, dim * ratio, rng, frozen=frozen)
        self.fc2 = Linear(dim * ratio, dim, rng, frozen=frozen)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm residual block: x + Attn(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator,
                 causal: bool = False, frozen: bool = False):
        self.ln_attn = LayerNorm(dim, frozen=frozen)
        self.attn = Attention(dim, heads, rng, frozen=frozen)
        self.ln_mlp = LayerNorm(dim, frozen=frozen)
        self.mlp = Mlp(dim, mlp_ratio, rng, frozen=frozen)
        self.causal = causal

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln_attn(x)
        x = x + self.attn(h, h, causal=self.causal)
        return x + self.mlp(self.ln_mlp(x))

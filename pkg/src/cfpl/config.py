"""Flat key=value run configuration with presets and strict validation.

The default values are the published operating point (16 queries of width
512, Q-Former depth 1, SE reduction 16, Beta(0.1) style mixing fired with
probability 0.5, batch 12, weight decay 0.05, minimum lr 1e-6). Presets
shrink the towers for desk-scale experiments without touching defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


@dataclass
class DspConfig:
    """Style-statistic mixing: Beta(alpha, alpha) weights, fired per batch."""

    alpha: float = 0.1
    p: float = 0.5
    active: bool = True

    def validate(self) -> None:
        if self.alpha <= 0:
            raise ValueError("dsp_alpha must be positive")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("dsp_prob must lie in [0, 1]")


@dataclass
class EncoderConfig:
    image_size: int = 224
    patch_size: int = 32
    width: int = 512
    image_layers: int = 4
    text_layers: int = 4
    heads: int = 8
    context_length: int = 77
    mlp_ratio: int = 4

    def validate(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if min(self.image_layers, self.text_layers) < 1:
            raise ValueError("encoders need at least one layer")

    @property
    def patch_count(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def token_count(self) -> int:
        return self.patch_count + 1


@dataclass
class QFormerConfig:
    query_count: int = 16
    width: int = 512
    depth: int = 1
    heads: int = 8
    source_dim: int = 512
    mlp_ratio: int = 4

    def validate(self) -> None:
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.query_count < 1:
            raise ValueError("query_count must be >= 1")

    def param_count(self) -> int:
        """Exact trainable size implied by the config."""
        d, sd = self.width, self.source_dim
        per_block = (
            4 * d * d + 4 * d          # self-attention projections + biases
            + 2 * d * d + 2 * sd * d + 4 * d  # cross-attention projections + biases
            + 8 * d * d + 5 * d        # MLP (hidden 4d)
            + 3 * 2 * d                # three query-side layernorms
            + 2 * sd                   # source layernorm
        )
        return self.query_count * d + self.depth * per_block


_BOOL_TRUE = {"true", "1", "yes", "on"}
_BOOL_FALSE = {"false", "0", "no", "off"}


@dataclass
class RunConfig:
    """Every knob of a run, serializable as a flat key=value file."""

    # encoders
    image_size: int = 224
    patch_size: int = 32
    width: int = 512
    image_layers: int = 4
    text_layers: int = 4
    heads: int = 8
    context_length: int = 77
    encoder_mlp_ratio: int = 4
    # query transformers
    query_count: int = 16
    qformer_depth: int = 1
    qformer_heads: int = 8
    qformer_mlp_ratio: int = 4
    # modulation gate
    reduction: int = 16
    # style mixing
    dsp: bool = True
    dsp_alpha: float = 0.1
    dsp_prob: float = 0.5
    # ablation toggles
    ptm: bool = True
    pm: bool = True
    modulation: str = "gate"  # gate | mean
    # optimization
    batch_size: int = 12
    epochs: int = 20
    max_steps: int = 0  # 0 = derive from epochs
    base_lr: float = 5e-5
    min_lr: float = 1e-6
    weight_decay: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    # augmentation
    crop_scale_min: float = 0.8
    crop_scale_max: float = 1.0
    # run control
    seed: int = 0
    precision: str = "float32"  # float32 | float64
    eval_batch: int = 64
    # metric reporting
    hter_policy: str = "eer"  # eer | fixed
    hter_tau: float = 0.5

    def validate(self) -> None:
        self.encoder_config().validate()
        self.cqf_config().validate()
        self.sqf_config().validate()
        self.dsp_config().validate()
        if self.context_length < self.query_count:
            raise ValueError(f"context_length {self.context_length} smaller than query_count {self.query_count}")
        if self.width % self.reduction != 0:
            raise ValueError(f"width {self.width} not divisible by reduction {self.reduction}")
        if self.modulation not in ("gate", "mean"):
            raise ValueError(f"modulation must be 'gate' or 'mean', got {self.modulation!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (both classes per batch)")
        if self.min_lr > self.base_lr:
            raise ValueError("min_lr must not exceed base_lr")
        if self.epochs < 1 and self.max_steps < 1:
            raise ValueError("need epochs >= 1 or max_steps >= 1")
        if not 0.0 < self.crop_scale_min <= self.crop_scale_max <= 1.0:
            raise ValueError("crop scale range must satisfy 0 < min <= max <= 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.hter_policy not in ("eer", "fixed"):
            raise ValueError(f"hter_policy must be 'eer' or 'fixed', got {self.hter_policy!r}")

    # -- derived views ---------------------------------------------------

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            image_size=self.image_size, patch_size=self.patch_size, width=self.width,
            image_layers=self.image_layers, text_layers=self.text_layers,
            heads=self.heads, context_length=self.context_length,
            mlp_ratio=self.encoder_mlp_ratio,
        )

    def cqf_config(self) -> QFormerConfig:
        return QFormerConfig(
            query_count=self.query_count, width=self.width, depth=self.qformer_depth,
            heads=self.qformer_heads, source_dim=self.width, mlp_ratio=self.qformer_mlp_ratio,
        )

    def sqf_config(self) -> QFormerConfig:
        return QFormerConfig(
            query_count=self.query_count, width=self.width, depth=self.qformer_depth,
            heads=self.qformer_heads, source_dim=2 * self.width, mlp_ratio=self.qformer_mlp_ratio,
        )

    def dsp_config(self) -> DspConfig:
        return DspConfig(alpha=self.dsp_alpha, p=self.dsp_prob, active=self.dsp)

    # -- serialization -----------------------------------------------------

    def resolved_text(self, header_comments: list[str] | None = None) -> str:
        lines = [f"# {c}" for c in (header_comments or [])]
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str):
    f = _FIELDS[key]
    raw = raw.strip()
    if f.type in ("bool", bool):
        low = raw.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if f.type in ("int", int):
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"config key {key!r}: expected an integer, got {raw!r}") from None
    if f.type in ("float", float):
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"config key {key!r}: expected a number, got {raw!r}") from None
    return raw


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply key=value lines on top of a base config. Unknown keys are rejected."""
    cfg = base if base is not None else RunConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        updates[key] = _parse_value(key, raw)
    return dataclasses.replace(cfg, **updates)


def load_config_file(path, base: RunConfig | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), base=base)


def apply_overrides(cfg: RunConfig, pairs: list[str]) -> RunConfig:
    """Apply 'key=value' strings from the command line."""
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override must look like key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"unknown config key {key!r}")
        updates[key] = _parse_value(key, raw)
    return dataclasses.replace(cfg, **updates)


def default_config() -> RunConfig:
    return RunConfig()


def tiny_config() -> RunConfig:
    """Desk-scale preset: 32px images, narrow towers, faster learning rate."""
    return RunConfig(
        image_size=32, patch_size=8, width=128,
        image_layers=2, text_layers=2, heads=4, qformer_heads=4,
        base_lr=1e-3, min_lr=1e-5,
    )


PRESETS = {
    "default": default_config,
    "tiny": tiny_config,
}


def preset_config(name: str) -> RunConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None

"""Training loop, evaluation, and model-level gradient verification.

One logical thread owns the parameters. Batch augmentation draws from
stateless per-sample generators keyed by (seed, step, slot), so assembling
batches in parallel could never change results; the remaining randomness
(batch sampling, style mixing, negative mining) lives in named sequential
streams that are saved into checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import GradCheckReport, finite_diff_gradcheck, sample_coordinates
from .checkpoint import Checkpoint
from .config import RunConfig
from .data import ImageStore, ManifestRow, augment, center_resize, sample_rng
from .metrics import ScoreSet
from .model import CfplModel, build_model
from .synth import domain_specs, render_image

_STREAM_IDS = {"data": 1, "dsp": 2, "mining": 3}
_AUGMENT_TAG = 4


def _new_stream(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=(seed, _STREAM_IDS[name]))))


@dataclass
class TrainRngs:
    data: np.random.Generator
    dsp: np.random.Generator
    mining: np.random.Generator

    @classmethod
    def create(cls, seed: int) -> "TrainRngs":
        return cls(*(_new_stream(seed, n) for n in ("data", "dsp", "mining")))

    def states(self) -> dict[str, dict]:
        return {name: getattr(self, name).bit_generator.state
                for name in ("data", "dsp", "mining")}

    @classmethod
    def from_states(cls, states: dict[str, dict]) -> "TrainRngs":
        rngs = {}
        for name in ("data", "dsp", "mining"):
            bg = np.random.PCG64()
            bg.state = states[name]
            rngs[name] = np.random.Generator(bg)
        return cls(**rngs)


class AdamW:
    """Adam with decoupled weight decay; parameters without grads are skipped."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999,
                 weight_decay: float = 0.05, eps: float = 1e-8):
        self.params = [p for p in params if not p.frozen]
        self.beta1, self.beta2 = beta1, beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= lr * (update + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float) -> float:
    """base_lr at step 0, min_lr at the last step, cosine in between."""
    if total_steps <= 1:
        return base_lr
    frac = step / (total_steps - 1)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * frac))


@dataclass
class LogRow:
    step: int
    loss_cls: float
    loss_ptm: float
    lr: float

    def line(self) -> str:
        return f"{self.step},{self.loss_cls!r},{self.loss_ptm!r},{self.lr!r}"


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[LogRow]
    model: CfplModel = field(repr=False, default=None)


def _sample_batch(rng: np.random.Generator, labels: np.ndarray, batch: int) -> np.ndarray:
    """Indices with both classes present; resamples degenerate draws."""
    n = len(labels)
    replace = n < batch
    for _ in range(1000):
        idx = rng.choice(n, size=batch, replace=replace)
        chosen = labels[idx]
        if (chosen == 0).any() and (chosen == 1).any():
            return idx
    raise RuntimeError("could not sample a batch containing both classes")


def _total_steps(config: RunConfig, n_rows: int) -> int:
    if config.max_steps > 0:
        return config.max_steps
    return config.epochs * max(1, n_rows // config.batch_size)


def snapshot(model: CfplModel, config: RunConfig, optimizer: AdamW | None = None,
             rngs: TrainRngs | None = None, step: int = 0) -> Checkpoint:
    params = {name: (p.data.copy(), p.frozen) for name, p in model.named_parameters()}
    opt_state = {}
    adam_step = 0
    if optimizer is not None:
        adam_step = optimizer.t
        for p, m, v in zip(optimizer.params, optimizer.m, optimizer.v):
            opt_state[p.name] = (m.copy(), v.copy())
    return Checkpoint(
        config=config, params=params, opt_state=opt_state, step=step,
        adam_step=adam_step, rng_states=rngs.states() if rngs else {})


def restore_model(ckpt: Checkpoint) -> CfplModel:
    """Rebuild the model and overwrite its weights from the checkpoint."""
    model = build_model(ckpt.config)
    for name, p in model.named_parameters():
        if name not in ckpt.params:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        arr, _ = ckpt.params[name]
        if arr.shape != p.data.shape:
            raise ValueError(f"checkpoint parameter {name!r} has shape {arr.shape}, "
                             f"expected {p.data.shape}")
        p.data = arr.copy()
    return model


def train(config: RunConfig, manifest: list[ManifestRow],
          store: ImageStore | None = None) -> TrainResult:
    """Optimize all non-frozen parameters; deterministic given the seed."""
    config.validate()
    labels_all = np.array([row.label for row in manifest], dtype=np.int64)
    if not ((labels_all == 0).any() and (labels_all == 1).any()):
        raise ValueError("training manifest must contain both classes")

    store = store or ImageStore()
    dtype = np.float64 if config.precision == "float64" else np.float32
    with ag.precision(dtype):
        model = build_model(config)
        rngs = TrainRngs.create(config.seed)
        optimizer = AdamW(model.trainable_parameters(),
                          beta1=config.adam_beta1, beta2=config.adam_beta2,
                          weight_decay=config.weight_decay)
        total = _total_steps(config, len(manifest))
        scale_range = (config.crop_scale_min, config.crop_scale_max)
        log: list[LogRow] = []
        for step in range(total):
            lr = cosine_lr(step, total, config.base_lr, config.min_lr)
            idx = _sample_batch(rngs.data, labels_all, config.batch_size)
            batch = np.stack([
                augment(store.get(manifest[i].path), config.image_size,
                        sample_rng(config.seed, _AUGMENT_TAG, step, slot), scale_range)
                for slot, i in enumerate(idx)])
            images = ag.Tensor(batch)
            labels = labels_all[idx]

            losses = model.forward_train(images, labels, rngs.dsp, rngs.mining)
            loss_cls = float(losses.cls.data)
            loss_ptm = float(losses.ptm.data) if losses.ptm is not None else 0.0
            if not math.isfinite(loss_cls + loss_ptm):
                raise RuntimeError(
                    f"non-finite loss at step {step}: cls={loss_cls}, ptm={loss_ptm}")

            optimizer.zero_grad()
            losses.total.backward()
            optimizer.step(lr)
            log.append(LogRow(step, loss_cls, loss_ptm, lr))

        ckpt = snapshot(model, config, optimizer, rngs, step=total)
    return TrainResult(checkpoint=ckpt, log=log, model=model)


def evaluate_model(model: CfplModel, config: RunConfig, manifest: list[ManifestRow],
                   store: ImageStore | None = None) -> ScoreSet:
    """Score a manifest: mixing off, center resize only."""
    store = store or ImageStore()
    dtype = np.float64 if config.precision == "float64" else np.float32
    scores = []
    with ag.precision(dtype):
        for start in range(0, len(manifest), config.eval_batch):
            chunk = manifest[start:start + config.eval_batch]
            batch = np.stack([
                center_resize(store.get(row.path), config.image_size) for row in chunk])
            scores.append(model.score(ag.Tensor(batch)))
    return ScoreSet(
        scores=np.concatenate(scores),
        labels=np.array([row.label for row in manifest], dtype=np.int64),
        domains=[row.domain for row in manifest])


def evaluate_scores(ckpt: Checkpoint, manifest: list[ManifestRow],
                    store: ImageStore | None = None) -> ScoreSet:
    return evaluate_model(restore_model(ckpt), ckpt.config, manifest, store=store)


def _synthetic_batch(config: RunConfig, batch: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """In-memory balanced batch for parameter checks (no files involved)."""
    specs = domain_specs(2)
    images, labels = [], []
    for i in range(batch):
        label = i % 2
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=(seed, 0xBA7C4, i))))
        arr = render_image(specs[i % len(specs)], label, rng, size=config.image_size)
        images.append(center_resize(arr, config.image_size))
        labels.append(label)
    return np.stack(images), np.array(labels, dtype=np.int64)


def grad_check_model(config: RunConfig, sample_count: int = 100, h: float = 1e-5,
                     batch_size: int = 4) -> GradCheckReport:
    """Check d(total loss)/d(theta) by central differences, in float64.

    Coordinates are spread across every trainable group; the frozen text
    tower is excluded by construction. Mining indices and the mixing draw
    are recorded once and replayed, so the objective is a pure function of
    the parameters.
    """
    cfg = config.replace(precision="float64", batch_size=max(2, batch_size))
    cfg.validate()
    with ag.precision(np.float64):
        model = build_model(cfg)
        image_data, labels = _synthetic_batch(cfg, cfg.batch_size, cfg.seed)
        images = ag.Tensor(image_data)
        rngs = TrainRngs.create(cfg.seed)
        recorded = model.forward_train(images, labels, rngs.dsp, rngs.mining).randomness

        def objective():
            return model.forward_train(images, labels, replay=recorded).total

        groups = {name: params for name, params in model.parameter_groups().items() if params}
        per_group = max(1, math.ceil(sample_count / len(groups)))
        coord_rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=(cfg.seed, 0xC00D))))
        coords = []
        for name, params in sorted(groups.items()):
            coords.extend(sample_coordinates(params, per_group, coord_rng, label=name))
        return finite_diff_gradcheck(objective, coords, h=h)

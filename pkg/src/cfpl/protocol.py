"""Cross-domain protocols: leave-one-out evaluation and the length/depth sweep."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import ImageStore, ManifestRow, load_manifest
from .metrics import ScoreSet, auc, hter, tpr_at_fpr
from .trainer import evaluate_model, train

SWEEP_LENGTHS = (8, 16, 32, 64)
SWEEP_DEPTHS = (1, 4, 8, 12)


@dataclass
class ProtocolSpec:
    domains: list[str]
    manifests: dict[str, Path]
    config_path: Path | None = None


def parse_protocol_spec(path) -> ProtocolSpec:
    """Read a flat spec: a domain list plus one manifest path per domain."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"protocol spec not found: {p}")
    domains: list[str] = []
    manifests: dict[str, Path] = {}
    config_path: Path | None = None
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{p} line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key == "domains":
            domains = [d.strip() for d in value.split(",") if d.strip()]
        elif key.startswith("manifest."):
            manifests[key[len("manifest."):]] = (p.parent / value).resolve()
        elif key == "config":
            config_path = (p.parent / value).resolve()
        else:
            raise ValueError(f"{p} line {lineno}: unknown key {key!r}")
    if len(domains) < 2:
        raise ValueError(f"{p}: protocol needs at least 2 domains")
    missing = [d for d in domains if d not in manifests]
    if missing:
        raise ValueError(f"{p}: no manifest for domains {missing}")
    return ProtocolSpec(domains=domains, manifests=manifests, config_path=config_path)


@dataclass
class TargetResult:
    target: str
    hter: float
    auc: float
    tpr_at_fpr1: float


@dataclass
class ProtocolReport:
    rows: list[TargetResult]
    policy: str
    seed: int

    def averages(self) -> TargetResult:
        return TargetResult(
            target="avg",
            hter=float(np.mean([r.hter for r in self.rows])),
            auc=float(np.mean([r.auc for r in self.rows])),
            tpr_at_fpr1=float(np.mean([r.tpr_at_fpr1 for r in self.rows])))

    def to_csv(self) -> str:
        lines = ["target,hter,auc,tpr_at_fpr1,threshold_policy,seed"]
        for r in [*self.rows, self.averages()]:
            lines.append(f"{r.target},{r.hter!r},{r.auc!r},{r.tpr_at_fpr1!r},"
                         f"{self.policy},{self.seed}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Presentation view, 2-decimal percent."""
        lines = [f"{'target':<10s} {'HTER%':>8s} {'AUC%':>8s} {'TPR@FPR=1%':>12s}"]
        for r in [*self.rows, self.averages()]:
            lines.append(f"{r.target:<10s} {100 * r.hter:8.2f} {100 * r.auc:8.2f} "
                         f"{100 * r.tpr_at_fpr1:12.2f}")
        return "\n".join(lines)


def _scores_to_result(target: str, scores: ScoreSet, config: RunConfig) -> TargetResult:
    tau = config.hter_tau if config.hter_policy == "fixed" else None
    return TargetResult(
        target=target,
        hter=hter(scores, policy=config.hter_policy, tau=tau),
        auc=auc(scores),
        tpr_at_fpr1=tpr_at_fpr(scores, 0.01))


def leave_one_out(spec: ProtocolSpec, config: RunConfig,
                  store: ImageStore | None = None) -> ProtocolReport:
    """Train on all domains but one, evaluate on the held-out one, per domain."""
    store = store or ImageStore()
    rows_by_domain = {d: load_manifest(spec.manifests[d]) for d in spec.domains}
    results = []
    for target in spec.domains:
        train_rows: list[ManifestRow] = []
        for domain in spec.domains:
            if domain != target:
                train_rows.extend(rows_by_domain[domain])
        outcome = train(config, train_rows, store=store)
        scores = evaluate_model(outcome.model, config, rows_by_domain[target], store=store)
        results.append(_scores_to_result(target, scores, config))
    return ProtocolReport(rows=results, policy=config.hter_policy, seed=config.seed)


@dataclass
class SweepResult:
    lengths: tuple[int, ...]
    depths: tuple[int, ...]
    hter_grid: np.ndarray  # [len(depths), len(lengths)]

    def to_csv(self) -> str:
        lines = ["depth," + ",".join(f"length_{n}" for n in self.lengths)]
        for depth, row in zip(self.depths, self.hter_grid):
            lines.append(f"{depth}," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        lines = ["HTER% by query length (columns) and depth (rows)"]
        lines.append("depth " + "".join(f"{f'x{n}':>9s}" for n in self.lengths))
        for depth, row in zip(self.depths, self.hter_grid):
            lines.append(f"x{depth:<4d} " + "".join(f"{100 * v:9.2f}" for v in row))
        return "\n".join(lines)


def sweep(config: RunConfig, train_rows: list[ManifestRow],
          eval_rows: list[ManifestRow], store: ImageStore | None = None,
          lengths: tuple[int, ...] = SWEEP_LENGTHS,
          depths: tuple[int, ...] = SWEEP_DEPTHS) -> SweepResult:
    """Train/evaluate one run per (query length, depth) cell; collect HTER."""
    store = store or ImageStore()
    grid = np.zeros((len(depths), len(lengths)), dtype=np.float64)
    tau = config.hter_tau if config.hter_policy == "fixed" else None
    for i, depth in enumerate(depths):
        for j, length in enumerate(lengths):
            cell = config.replace(query_count=length, qformer_depth=depth)
            outcome = train(cell, train_rows, store=store)
            scores = evaluate_model(outcome.model, cell, eval_rows, store=store)
            grid[i, j] = hter(scores, policy=config.hter_policy, tau=tau)
    return SweepResult(lengths=tuple(lengths), depths=tuple(depths), hter_grid=grid)

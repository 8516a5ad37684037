"""Command-line entry point.

Subcommands: synth, train, eval, protocol, gradcheck, sweep. Every run
writes its fully resolved configuration next to its outputs so it can be
reproduced exactly.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (RunConfig, apply_overrides, load_config_file,
                     preset_config)
from .data import load_manifest
from .metrics import auc, hter, tpr_at_fpr
from .protocol import leave_one_out, parse_protocol_spec, sweep
from .synth import synth_dataset
from .trainer import evaluate_scores, grad_check_model, train


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", default="default",
                        help="base preset: default (paper-scale) or tiny")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")
    parser.add_argument("--seed", type=int, default=None, help="override the seed")


def _resolve_config(args) -> RunConfig:
    cfg = preset_config(args.preset)
    if args.config is not None:
        cfg = load_config_file(args.config, base=cfg)
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    cfg.validate()
    return cfg


def _prepare_out(args, cfg: RunConfig | None = None) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg is not None:
        comments = ["resolved run configuration", "command: " + " ".join(sys.argv)]
        (out / "resolved.cfg").write_text(cfg.resolved_text(comments))
    return out


def _cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    info = synth_dataset(out, domains=args.domains, per_class=args.per_class,
                         seed=args.seed, size=args.size)
    (out / "synth.cfg").write_text(
        f"# synthetic dataset parameters\ndomains = {args.domains}\n"
        f"per_class = {args.per_class}\nseed = {args.seed}\nsize = {args.size}\n")
    print(f"wrote {info['count']} images under {out}")
    print(f"manifest: {info['manifest']}")
    print(f"protocol spec: {info['protocol']}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    rows = load_manifest(args.data)
    out = _prepare_out(args, cfg)
    result = train(cfg, rows)
    ckpt_path = out / "checkpoint.cfpl"
    save_checkpoint(ckpt_path, result.checkpoint)
    log_path = out / "train_log.csv"
    log_path.write_text("step,loss_cls,loss_ptm,lr\n"
                        + "\n".join(row.line() for row in result.log) + "\n")
    last = result.log[-1]
    print(f"trained {len(result.log)} steps; final loss_cls={last.loss_cls:.4f} "
          f"loss_ptm={last.loss_ptm:.4f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    rows = load_manifest(args.data)
    out = _prepare_out(args, ckpt.config)
    scores = evaluate_scores(ckpt, rows)
    cfg = ckpt.config
    tau = cfg.hter_tau if cfg.hter_policy == "fixed" else None
    results = {
        "hter": hter(scores, policy=cfg.hter_policy, tau=tau),
        "auc": auc(scores),
        "tpr_at_fpr1": tpr_at_fpr(scores, 0.01),
    }
    (out / "scores.csv").write_text(
        "score,label,domain\n" + "\n".join(
            f"{s!r},{l},{d}" for s, l, d in zip(scores.scores, scores.labels, scores.domains))
        + "\n")
    (out / "metrics.csv").write_text(
        "metric,value,threshold_policy\n" + "\n".join(
            f"{k},{v!r},{cfg.hter_policy}" for k, v in results.items()) + "\n")
    for k, v in results.items():
        print(f"{k}: {100 * v:.2f}%")
    return 0


def _cmd_protocol(args) -> int:
    spec = parse_protocol_spec(args.spec)
    if args.config is None and spec.config_path is not None:
        args.config = str(spec.config_path)
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    report = leave_one_out(spec, cfg)
    (out / "report.csv").write_text(report.to_csv())
    print(report.to_table())
    print(f"report: {out / 'report.csv'}")
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = _resolve_config(args)
    report = grad_check_model(cfg, sample_count=args.samples, h=args.h)
    if args.out:
        out = _prepare_out(args, cfg)
        lines = ["group,param,index,analytic,numeric,rel_err"]
        lines += [f"{e.label},{e.param_name},{e.index},{e.analytic!r},{e.numeric!r},{e.rel_err!r}"
                  for e in report.entries]
        (out / "gradcheck.csv").write_text("\n".join(lines) + "\n")
    print(report.to_text())
    if report.max_rel_err >= args.tolerance:
        print(f"FAIL: max relative error {report.max_rel_err:.3e} "
              f">= tolerance {args.tolerance:g}", file=sys.stderr)
        return 1
    return 0


def _cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    train_rows = load_manifest(args.data)
    eval_rows = load_manifest(args.eval_data)
    out = _prepare_out(args, cfg)
    result = sweep(cfg, train_rows, eval_rows)
    (out / "sweep_hter.csv").write_text(result.to_csv())
    print(result.to_table())
    print(f"grid: {out / 'sweep_hter.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfpl",
        description="Prompt-learned face anti-spoofing: synthesis, training, "
                    "evaluation, protocols, and verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-domain dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--domains", type=int, default=3)
    p.add_argument("--per-class", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--size", type=int, default=64, help="native image size in pixels")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="training manifest CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="score a manifest with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("protocol", help="leave-one-out over a domain spec")
    _add_config_args(p)
    p.add_argument("--spec", required=True, help="protocol spec file")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_protocol)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_config_args(p)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_gradcheck)

    p = sub.add_parser("sweep", help="query length x depth grid, reporting HTER")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="training manifest CSV")
    p.add_argument("--eval-data", required=True, help="evaluation manifest CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

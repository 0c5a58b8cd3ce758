"""Command-line entry point.

Subcommands: pretrain, run, sweep, forgetting, export, serve. Config files
are JSON documents (see config.py); common fields can be overridden with
flags. Exit codes: 2 for invalid configuration, 3 for a runtime abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import runner
from .config import (DESK_LR, ExperimentConfig, desk_config, load_config,
                     save_config)
from .errors import ConfigurationError, StreamAbort
from .numerics import PretrainDivergence


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    from dataclasses import replace

    if getattr(args, "seeds", None):
        config = replace(config, seeds=[int(s) for s in args.seeds.split(",")])
    if getattr(args, "out", None):
        config = replace(config, output_dir=str(args.out))
    if getattr(args, "checkpoint", None):
        config = replace(config, checkpoint=str(args.checkpoint))
    if getattr(args, "budget", None) is not None:
        config = replace(config, adapter=replace(config.adapter, budget=args.budget))
    if getattr(args, "adapter", None):
        config = replace(config, adapter=replace(config.adapter, kind=args.adapter,
                                                 budget=0 if args.adapter.endswith("nolabel")
                                                 else config.adapter.budget))
    if getattr(args, "annotator", None):
        config = replace(config, annotator=replace(config.annotator, kind=args.annotator))
    if getattr(args, "lr", None) is not None:
        config = replace(config, optimizer=replace(config.optimizer, lr=args.lr))
    return config


def _load_base_config(args) -> ExperimentConfig:
    if args.config:
        config = load_config(args.config)
    else:
        config = desk_config()
    return _apply_overrides(config, args)


def cmd_pretrain(args) -> int:
    config = _load_base_config(args)
    out = Path(args.out or "source_checkpoint.npz")
    net, report = runner.pretrain_source(config, checkpoint_path=out)
    print(f"pretrained source model -> {out}")
    print(f"  epoch losses: {[round(h, 4) for h in report['epoch_losses']]}")
    print(f"  held-out mIoU: {report['holdout_miou']:.4f}")
    if report["holdout_miou"] < 0.85:
        print("  WARNING: below the 0.85 source-quality gate", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    config = _load_base_config(args)
    combined = runner.execute_run(config)
    print(json.dumps({k: combined[k] for k in combined
                      if k not in ("per_seed",)}, indent=2))
    print(f"artifacts in {config.output_dir}")
    return 0


def _default_grid(name: str, config: ExperimentConfig) -> dict:
    from .annotator import scaled_suppression

    if name == "budgets":
        return {"adapter.budget": [1, 2, 4, 8, 16]}
    if name == "annotators":
        return {"annotator.kind": ["rand", "ent", "ripu", "bvsb"]}
    if name == "adapters":
        return {"adapter.kind": ["b0", "b1"]}
    if name == "omegas":
        return {"annotator.imbalance_mode": ["blend"],
                "annotator.imbalance_omega": [0.0, 0.25, 0.5, 0.75, 1.0]}
    if name == "suppression":
        ks = sorted({scaled_suppression(config.stream.width, base=b)
                     for b in (17, 33, 65, 129, 257)})
        return {"annotator.suppression_k": ks}
    if name == "consistency":
        return {"adapter.cst_kind": ["sce", "l1", "mse"]}
    if name == "orders":
        base = list(config.stream.corruptions)
        orders = [base[i:] + base[:i] for i in range(min(4, len(base)))]
        return {"stream.corruptions": orders}
    raise ConfigurationError(
        f"--grid-name {name!r}: expected one of budgets/annotators/adapters/"
        "omegas/suppression/consistency/orders")


def cmd_sweep(args) -> int:
    config = _load_base_config(args)
    grid = {}
    if args.grid:
        grid.update(json.loads(Path(args.grid).read_text()))
    for name in args.grid_name or []:
        grid.update(_default_grid(name, config))
    if not grid:
        raise ConfigurationError("sweep needs --grid FILE and/or --grid-name")
    merged = runner.execute_sweep(config, grid, args.out or "runs/sweep")
    print(f"sweep finished, merged table: {merged}")
    return 0


def cmd_forgetting(args) -> int:
    config = _load_base_config(args)
    doc = runner.execute_forgetting(config, args.out or "runs/forgetting")
    print("median forgetting matrix (rows = snapshots, cols = domains):")
    for name, row in zip(doc["rows"], doc["median_matrix"]):
        print(f"  {name:18s} " + " ".join(f"{v:.3f}" for v in row))
    return 0


def cmd_export(args) -> int:
    written = runner.export_plot_data(args.runs, args.out or "runs/export")
    for path in written:
        print(f"wrote {path}")
    if not written:
        print("no summaries found", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    from dataclasses import replace

    from .service import serve

    config = _load_base_config(args)
    config = replace(config, oracle="human")
    if args.timeout is not None:
        config = replace(config, oracle_timeout=args.timeout)
    serve(config, host=args.host, port=args.port)
    return 0


def cmd_init_config(args) -> int:
    config = desk_config()
    save_config(args.out or "desk_config.json", config)
    print(f"wrote {args.out or 'desk_config.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activeseg",
        description="Online active test-time adaptation for segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_out=True):
        p.add_argument("--config", help="JSON config file (desk defaults if omitted)")
        if with_out:
            p.add_argument("--out", help="output directory/file")
        p.add_argument("--seeds", help="comma-separated seed list override")
        p.add_argument("--checkpoint", help="source model checkpoint")
        p.add_argument("--adapter", help="adapter kind override")
        p.add_argument("--annotator", help="annotator kind override")
        p.add_argument("--budget", type=int, help="active budget override")
        p.add_argument("--lr", type=float,
                       help=f"adaptation learning rate override (desk default {DESK_LR})")

    p = sub.add_parser("pretrain", help="train and save the source model")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="one adaptation experiment (all seeds)")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid of experiments with a merged table")
    common(p)
    p.add_argument("--grid", help="JSON file mapping dotted config fields to value lists")
    p.add_argument("--grid-name", action="append",
                   help="named default grid (budgets, annotators, adapters, "
                        "omegas, suppression, consistency, orders); repeatable")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("forgetting", help="post-adaptation re-evaluation matrix")
    common(p)
    p.set_defaults(func=cmd_forgetting)

    p = sub.add_parser("export", help="flatten run summaries into plot-ready CSVs")
    p.add_argument("--runs", required=True, help="directory tree of run artifacts")
    p.add_argument("--out", help="export directory")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="HTTP session service with human oracle")
    common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--timeout", type=float, help="per-frame label timeout (s)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("init-config", help="write the desk benchmark config file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (StreamAbort, PretrainDivergence) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

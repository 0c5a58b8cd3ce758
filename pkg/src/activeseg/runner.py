"""Experiment orchestration: pretraining the source model, executing runs and
sweeps, the forgetting analysis and plot-data export.

A run directory contains a copy of the config, one subdirectory per seed
(frames CSV, summary JSON, final checkpoint, domain snapshots) and a combined
summary with per-seed values plus medians.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import adapter, metrics, numerics, streamlab
from .config import ExperimentConfig, save_config
from .errors import ConfigurationError

RUN_FORMAT_VERSION = "ataseg-run-v1"


def pretrain_source(config: ExperimentConfig, checkpoint_path=None):
    """Train the source model on clean scenes; returns (net, report).

    The report carries the per-epoch losses and held-out mIoU so callers can
    gate on source quality.
    """
    pc = config.pretrain
    sc = config.stream
    train = streamlab.make_source_dataset(pc.scenes, sc.num_classes, sc.height,
                                          sc.width, pc.dataset_seed)
    held = streamlab.make_source_dataset(pc.holdout, sc.num_classes, sc.height,
                                         sc.width, pc.holdout_seed)
    net = numerics.SegNet(
        numerics.standard_layers(3, tuple(pc.hidden), sc.num_classes),
        seed=pc.init_seed)
    history = numerics.pretrain(net, train, epochs=pc.epochs, lr=pc.lr,
                                seed=pc.init_seed)
    cm = metrics.evaluate_frozen(net, held, sc.num_classes)
    report = {
        "epoch_losses": history,
        "holdout_miou": metrics.miou(cm)[1],
        "scenes": pc.scenes,
        "epochs": pc.epochs,
    }
    if checkpoint_path is not None:
        state = numerics.AdamState.fresh(net.n_params, lr=pc.lr)
        streamlab.save_checkpoint(checkpoint_path, net, state)
    return net, report


def load_or_pretrain_source(config: ExperimentConfig):
    if config.checkpoint:
        net, _ = streamlab.load_checkpoint(config.checkpoint)
        if net.num_classes != config.stream.num_classes:
            raise ConfigurationError(
                "checkpoint: class count does not match stream.num_classes")
        return net
    net, _ = pretrain_source(config)
    return net


def _domain_scene_lists(scenes, domain_ids):
    out = {}
    for scene, d in zip(scenes, domain_ids):
        out.setdefault(int(d), []).append(scene)
    return [out[d] for d in sorted(out)]


def execute_seed(config: ExperimentConfig, source_net, seed: int,
                 oracle=None, on_record=None) -> dict:
    """One full adaptation run for one seed. Returns a result dict with the
    records, summary, snapshots and final session."""
    spec = config.stream.to_stream_spec(seed)
    scenes = streamlab.build_stream(spec)
    domain_ids = spec.domain_ids()
    opt = config.optimizer
    session = adapter.Session(
        source_net.clone(),
        numerics.AdamState.fresh(source_net.n_params, lr=opt.lr,
                                 beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps),
        seed=seed)
    if oracle is None:
        oracle = adapter.SimulatedOracle()
    result = adapter.run_stream(session, scenes, domain_ids, config.adapter,
                                config.annotator, oracle, on_record=on_record)

    meta = {
        "adapter": config.adapter.kind,
        "annotator": config.annotator.kind,
        "budget": config.adapter.budget,
        "cst_kind": config.adapter.cst_kind.value,
        "imbalance_mode": config.annotator.imbalance_mode,
        "imbalance_omega": config.annotator.imbalance_omega,
        "suppression_k": config.annotator.suppression_k,
        "lr": opt.lr,
        "seed": seed,
        "protocol": config.stream.protocol,
        "corruption_order": list(config.stream.corruptions),
    }
    summary = metrics.summarize(result.records, config.stream.num_classes, meta)
    summary["imbalance_degree"] = metrics.imbalance_degree(session.tracker)
    summary["oracle_events"] = list(session.events)

    if config.compute_baseline:
        baseline_cum = metrics.ConfusionMatrix(config.stream.num_classes)
        per_domain = {}
        last_domain = 0
        for d, dscenes in enumerate(_domain_scene_lists(scenes, domain_ids)):
            cm = metrics.evaluate_frozen(source_net, dscenes,
                                         config.stream.num_classes)
            per_domain[str(d)] = metrics.miou(cm)[1]
            baseline_cum.merge(cm)
            last_domain = d
        summary["frozen_baseline"] = {
            "miou_cum": metrics.miou(baseline_cum)[1],
            "domain_miou": per_domain,
            "final_domain_miou": per_domain[str(last_domain)],
        }
        summary["error_accumulation"] = bool(
            config.adapter.kind in adapter.NOLABEL_KINDS
            and summary["final_domain_miou"]
            < summary["frozen_baseline"]["final_domain_miou"])
    return {
        "records": result.records,
        "snapshots": result.domain_snapshots,
        "summary": summary,
        "session": session,
        "scenes": scenes,
        "domain_ids": domain_ids,
    }


def _median(values):
    return float(np.median(np.asarray(values, dtype=float)))


def write_seed_artifacts(seed_dir: Path, seed_result: dict) -> None:
    seed_dir.mkdir(parents=True, exist_ok=True)
    streamlab.write_frames_csv(seed_dir / "frames.csv", seed_result["records"])
    (seed_dir / "summary.json").write_text(
        json.dumps(seed_result["summary"], indent=2, sort_keys=True) + "\n")
    session = seed_result["session"]
    streamlab.save_checkpoint(seed_dir / "checkpoint.npz", session.net,
                              session.adam)
    snaps = seed_result["snapshots"]
    np.savez(seed_dir / "snapshots.npz",
             domains=np.array([d for d, _ in snaps], dtype=np.int64),
             params=np.stack([p for _, p in snaps]))


def execute_run(config: ExperimentConfig, run_dir=None) -> dict:
    """Run every seed in the config and write the artifact directory."""
    run_dir = Path(run_dir if run_dir is not None else config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(run_dir / "config.json", config)
    source_net = load_or_pretrain_source(config)

    per_seed = {}
    for seed in config.seeds:
        result = execute_seed(config, source_net, seed)
        write_seed_artifacts(run_dir / f"seed_{seed}", result)
        per_seed[seed] = result["summary"]

    combined = {
        "format_version": RUN_FORMAT_VERSION,
        "seeds": list(config.seeds),
        "per_seed": {str(s): per_seed[s] for s in config.seeds},
        "median_miou_cum": _median([per_seed[s]["miou_cum"] for s in config.seeds]),
        "median_domain_miou_mean": _median(
            [per_seed[s]["domain_miou_mean"] for s in config.seeds]),
        "median_final_domain_miou": _median(
            [per_seed[s]["final_domain_miou"] for s in config.seeds]),
    }
    if all("error_accumulation" in per_seed[s] for s in config.seeds):
        flags = [per_seed[s]["error_accumulation"] for s in config.seeds]
        combined["error_accumulation"] = bool(np.median(flags) >= 0.5)
    (run_dir / "summary.json").write_text(
        json.dumps(combined, indent=2, sort_keys=True) + "\n")
    return combined


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _set_field(config: ExperimentConfig, dotted: str, value):
    parts = dotted.split(".")
    if len(parts) == 1:
        return replace(config, **{parts[0]: value})
    if len(parts) != 2:
        raise ConfigurationError(f"grid key {dotted!r}: expected section.field")
    section, fieldname = parts
    sub = getattr(config, section, None)
    if sub is None or not hasattr(sub, fieldname):
        raise ConfigurationError(f"grid key {dotted!r}: no such config field")
    return replace(config, **{section: replace(sub, **{fieldname: value})})


def expand_grid(base: ExperimentConfig, grid: dict):
    """Cartesian product of grid values over dotted config fields."""
    keys = list(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = base
        cell_id_parts = []
        for key, value in zip(keys, combo):
            cfg = _set_field(cfg, key, value)
            flat = value if not isinstance(value, (list, tuple)) \
                else "-".join(str(v)[:4] for v in value)
            cell_id_parts.append(f"{key.split('.')[-1]}={flat}")
        cells.append(("__".join(cell_id_parts), cfg, dict(zip(keys, combo))))
    return cells


SWEEP_CSV_COLUMNS = ["cell", "seed", "adapter", "annotator", "budget",
                     "cst_kind", "imbalance_mode", "imbalance_omega",
                     "suppression_k", "miou_cum", "domain_miou_mean",
                     "final_domain_miou", "imbalance_degree",
                     "spatial_diversity"]


def execute_sweep(base: ExperimentConfig, grid: dict, sweep_dir) -> Path:
    """Run the full grid; one run directory per cell plus a merged CSV."""
    sweep_dir = Path(sweep_dir)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for cell_id, cfg, _params in expand_grid(base, grid):
        cell_dir = sweep_dir / cell_id
        execute_run(cfg, cell_dir)
        for seed in cfg.seeds:
            summary = json.loads(
                (cell_dir / f"seed_{seed}" / "summary.json").read_text())
            rows.append({
                "cell": cell_id, "seed": seed,
                "adapter": summary["adapter"],
                "annotator": summary["annotator"],
                "budget": summary["budget"],
                "cst_kind": summary["cst_kind"],
                "imbalance_mode": summary["imbalance_mode"],
                "imbalance_omega": summary["imbalance_omega"],
                "suppression_k": summary["suppression_k"],
                "miou_cum": summary["miou_cum"],
                "domain_miou_mean": summary["domain_miou_mean"],
                "final_domain_miou": summary["final_domain_miou"],
                "imbalance_degree": summary["imbalance_degree"],
                "spatial_diversity": summary["spatial_diversity"],
            })
    merged = sweep_dir / "sweep.csv"
    with open(merged, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return merged


# ---------------------------------------------------------------------------
# forgetting analysis
# ---------------------------------------------------------------------------

def execute_forgetting(config: ExperimentConfig, out_dir) -> dict:
    """Adapt through the stream per seed, then re-evaluate every domain with
    every post-domain snapshot (plus the frozen source model as a baseline
    row)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    source_net = load_or_pretrain_source(config)
    matrices = []
    for seed in config.seeds:
        result = execute_seed(config, source_net, seed)
        domain_scenes = _domain_scene_lists(result["scenes"], result["domain_ids"])
        snapshots = [source_net.params] + [p for _, p in result["snapshots"]]
        matrix = metrics.forgetting_eval(source_net, snapshots, domain_scenes,
                                         config.stream.num_classes)
        matrices.append(matrix)
    median_matrix = np.median(np.stack(matrices), axis=0)
    doc = {
        "format_version": RUN_FORMAT_VERSION,
        "rows": ["source"] + [f"after_domain_{d}" for d, _ in result["snapshots"]],
        "cols": [f"domain_{i}" for i in range(median_matrix.shape[1])],
        "median_matrix": median_matrix.tolist(),
        "per_seed_matrices": [m.tolist() for m in matrices],
        "seeds": list(config.seeds),
    }
    (out_dir / "forgetting.json").write_text(json.dumps(doc, indent=2) + "\n")
    with open(out_dir / "forgetting_matrix.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["snapshot"] + doc["cols"])
        for name, row in zip(doc["rows"], doc["median_matrix"]):
            writer.writerow([name] + [f"{v:.6f}" for v in row])
    return doc


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_plot_data(root, out_dir) -> list:
    """Flatten every seed summary found under ``root`` into plot-ready CSVs:
    a generic long table, plus budget-curve and imbalance/diversity views."""
    root = Path(root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in sorted(root.rglob("summary.json")):
        summary = json.loads(path.read_text())
        if "per_seed" in summary or summary.get("no_data"):
            continue  # combined summaries duplicate the per-seed files
        rows.append({
            "run": str(path.parent.relative_to(root)),
            "adapter": summary.get("adapter"),
            "annotator": summary.get("annotator"),
            "budget": summary.get("budget"),
            "seed": summary.get("seed"),
            "imbalance_mode": summary.get("imbalance_mode"),
            "imbalance_omega": summary.get("imbalance_omega"),
            "suppression_k": summary.get("suppression_k"),
            "miou_cum": summary.get("miou_cum"),
            "domain_miou_mean": summary.get("domain_miou_mean"),
            "final_domain_miou": summary.get("final_domain_miou"),
            "imbalance_degree": summary.get("imbalance_degree"),
            "spatial_diversity": summary.get("spatial_diversity"),
        })
    written = []
    if rows:
        generic = out_dir / "runs_long.csv"
        with open(generic, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        written.append(generic)

        budget = out_dir / "budget_curve.csv"
        with open(budget, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["adapter", "annotator", "budget", "median_miou_cum"])
            groups = {}
            for r in rows:
                key = (r["adapter"], r["annotator"], r["budget"])
                groups.setdefault(key, []).append(r["miou_cum"])
            for (adap, annot, b), vals in sorted(groups.items(),
                                                 key=lambda kv: str(kv[0])):
                writer.writerow([adap, annot, b, f"{_median(vals):.6f}"])
        written.append(budget)

        scatter = out_dir / "imbalance_diversity.csv"
        with open(scatter, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["annotator", "imbalance_mode", "imbalance_omega",
                             "suppression_k", "imbalance_degree",
                             "spatial_diversity", "miou_cum"])
            for r in rows:
                writer.writerow([r["annotator"], r["imbalance_mode"],
                                 r["imbalance_omega"], r["suppression_k"],
                                 r["imbalance_degree"], r["spatial_diversity"],
                                 r["miou_cum"]])
        written.append(scatter)
    for path in sorted(root.rglob("forgetting.json")):
        doc = json.loads(path.read_text())
        target = out_dir / "forgetting_matrix.csv"
        with open(target, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["snapshot"] + doc["cols"])
            for name, row in zip(doc["rows"], doc["median_matrix"]):
                writer.writerow([name] + [f"{v:.6f}" for v in row])
        written.append(target)
    return written

"""Config-driven experiment orchestration and artifact-backed reporting.

A run directory is the unit of record: it holds the resolved config, the
serialized scenario, the accuracy matrix, per-task extractor snapshots, the
prototype pool, the final prediction log, optional feature dumps, and a
summary file. Every reported number is recomputable from those artifacts.
"""

from __future__ import annotations

import json
import logging
import os
from itertools import product
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .config import ConfigError, config_hash, config_text, load_config, resolve_config
from .data import ArrayDataset, gaussian_blobs, two_moons
from .engine import ArchConfig, RunRecord, TrainConfig, run_all
from .losses import LossWeights
from .metrics import (
    AccuracyMatrix,
    average_accuracy,
    forgetting_measure,
    initial_accuracy,
    piv_pfts,
    task_inference_accuracy,
)
from .model import build_bundle, load_snapshot, save_snapshot
from .prototypes import save_pool
from .scenario import (
    ContinualScenario,
    attach_domains,
    cil_counterpart,
    load_scenario,
    read_manifest,
    save_scenario,
    split_base_increment,
    split_even,
)

logger = logging.getLogger(__name__)

DEFAULT_WEIGHTS = LossWeights()


# ---------------------------------------------------------------------------
# Builders


def build_scenario(cfg: Mapping) -> ContinualScenario:
    sc = cfg["scenario"]
    seed = int(sc["seed"])
    if sc["split"] == "even":
        scenario = split_even(int(sc["num_classes"]), int(sc["num_tasks"]), seed)
    else:
        scenario = split_base_increment(int(sc["num_classes"]), int(sc["base"]), int(sc["increments"]), seed)
    if sc["domain_order"] is not None:
        scenario = attach_domains(scenario, [str(d) for d in sc["domain_order"]])
    return scenario


def build_dataset(cfg: Mapping):
    ds = cfg["dataset"]
    kind = ds["kind"]
    if kind == "blobs":
        return gaussian_blobs(
            num_classes=int(cfg["scenario"]["num_classes"]),
            dim=int(ds["dim"]),
            train_per_class=int(ds["train_per_class"]),
            test_per_class=int(ds["test_per_class"]),
            seed=int(ds["seed"]),
            center_scale=float(ds["center_scale"]),
            spread=float(ds["spread"]),
        )
    if kind == "moons":
        return two_moons(
            train_per_class=int(ds["train_per_class"]),
            test_per_class=int(ds["test_per_class"]),
            seed=int(ds["seed"]),
            noise=float(ds["noise"]),
        )
    if ds["train_manifest"] is None or ds["test_manifest"] is None:
        raise ConfigError("dataset.kind=manifest requires train_manifest and test_manifest paths")
    return {
        "train": read_manifest(ds["train_manifest"]),
        "test": read_manifest(ds["test_manifest"]),
    }


def build_train_config(cfg: Mapping) -> TrainConfig:
    tr = cfg["train"]
    dc = cfg["disco"]
    return TrainConfig(
        epochs=int(tr["epochs"]),
        milestones=tuple(int(m) for m in tr["milestones"]),
        lr=float(tr["lr"]),
        lr_decay=float(tr["lr_decay"]),
        weight_decay=float(tr["weight_decay"]),
        momentum=float(tr["momentum"]),
        batch_size=int(tr["batch_size"]),
        seed=int(cfg["seed"]),
        loss_weights=LossWeights.from_config(dc),
        baseline=str(tr["baseline"]),
        prototype_mode=str(tr["prototype_mode"]),
        disco=bool(dc["enabled"]),
        buffer_capacity=int(tr["buffer_capacity"]),
        distill_weight=float(tr["distill_weight"]),
        ccd_reduction=str(dc["ccd_reduction"]),
        norm_floor=None if dc["norm_floor"] is None else float(dc["norm_floor"]),
        text_embed_dim=int(tr["text_embed_dim"]),
    )


def build_arch(cfg: Mapping) -> ArchConfig:
    ar = cfg["arch"]
    hidden = tuple(int(h) for h in ar["hidden_dims"])
    if len(hidden) != 2:
        raise ConfigError("arch.hidden_dims must list exactly two widths")
    return ArchConfig(
        backbone=str(ar["backbone"]),
        hidden_dims=hidden,
        feature_dim=int(ar["feature_dim"]),
        contrast_dim=int(ar["contrast_dim"]),
    )


def output_root(cfg: Mapping, out: str | Path | None = None) -> Path:
    """--out flag beats the DISCO_OUT environment override beats the config."""
    if out is not None:
        return Path(out)
    env = os.environ.get("DISCO_OUT")
    if env:
        return Path(env)
    return Path(cfg["output_root"])


# ---------------------------------------------------------------------------
# Running


def _save_model(record: RunRecord, cfg: Mapping, run_dir: Path) -> None:
    bundle = record.bundle
    payload = {
        "backbone": bundle.backbone.state_dict(),
        "projector": bundle.projector.state_dict(),
        "classifier_weight": bundle.classifier.weight.detach(),
        "classifier_bias": bundle.classifier.bias.detach(),
        "class_ids": list(bundle.classifier.class_ids),
        "contrast_dim": bundle.contrast_dim,
    }
    torch.save(payload, run_dir / "model_final.pt")


def _write_predictions(record: RunRecord, run_dir: Path) -> None:
    lines = ["true_task,true_label,pred_class,pred_within_task"]
    for task, label, pred, within in record.predictions.rows():
        lines.append(f"{int(task)},{int(label)},{int(pred)},{int(within)}")
    (run_dir / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _execute(cfg: dict, scenario: ContinualScenario, run_dir: Path, overwrite: bool, batch_observer=None) -> Path:
    if run_dir.exists() and not overwrite:
        raise ConfigError(f"run directory {run_dir} already exists (pass overwrite/--force to replace)")
    run_dir.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    train_config = build_train_config(cfg)
    arch = build_arch(cfg)
    chash = config_hash(cfg)

    feature_mode = cfg["features"]
    record = run_all(
        scenario,
        dataset,
        train_config,
        arch,
        feature_dir=(run_dir / "features") if feature_mode != "none" else None,
        feature_mode=feature_mode,
        batch_observer=batch_observer,
        config_hash=chash,
    )

    (run_dir / "config.txt").write_text(config_text(cfg), encoding="utf-8")
    save_scenario(scenario, run_dir / "scenario.txt")
    record.matrix.to_csv(run_dir / "accuracy_matrix.csv")
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for snap in record.snapshots:
        save_snapshot(snap, snap_dir / f"task_{snap.task_id}.bin", arch_hash=record.arch_hash)
    proto_dir = run_dir / "prototypes"
    proto_dir.mkdir(exist_ok=True)
    save_pool(record.pool, proto_dir / "pool.bin")
    _write_predictions(record, run_dir)
    _save_model(record, cfg, run_dir)

    summary = run_metrics(run_dir)
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return run_dir


def run(
    config: Mapping | str | Path,
    seed: int | None = None,
    out: str | Path | None = None,
    overwrite: bool = False,
    batch_observer=None,
) -> Path:
    """Execute one experiment; returns the run directory."""
    raw = load_config(config) if isinstance(config, (str, Path)) else config
    cfg = resolve_config(raw, seed=seed)
    scenario = build_scenario(cfg)
    root = output_root(cfg, out)
    run_dir = root / f"{cfg['name']}_seed{cfg['seed']}_{config_hash(cfg)}"
    return _execute(cfg, scenario, run_dir, overwrite, batch_observer=batch_observer)


# ---------------------------------------------------------------------------
# Metrics over run directories


def _load_predictions(run_dir: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    lines = (run_dir / "predictions.csv").read_text(encoding="utf-8").strip().splitlines()
    rows = [tuple(int(v) for v in line.split(",")) for line in lines[1:]]
    arr = np.asarray(rows, dtype=np.int64)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def run_metrics(run_dir: str | Path) -> dict:
    """Recompute every metric of one run from its persisted artifacts."""
    run_dir = Path(run_dir)
    matrix = AccuracyMatrix.from_csv(run_dir / "accuracy_matrix.csv")
    aa_k, aa = average_accuracy(matrix)
    result: dict = {
        "run_dir": str(run_dir),
        "AA": aa,
        "AA_k": aa_k,
        "IA": initial_accuracy(matrix),
        "num_tasks": matrix.num_tasks,
    }
    if matrix.num_tasks >= 2:
        f_j, fm = forgetting_measure(matrix)
        result["FM"] = fm
        result["f_j"] = f_j
    snap_paths = sorted((run_dir / "snapshots").glob("task_*.bin"), key=lambda p: int(p.stem.split("_")[1]))
    if len(snap_paths) >= 3:
        piv, pfts = piv_pfts([load_snapshot(p) for p in snap_paths])
        result["PIV"] = piv
        result["PFTS"] = pfts
    else:
        logger.warning("run %s has %d snapshots; PIV/PFTS need at least 3 and were omitted", run_dir, len(snap_paths))
    pred_path = run_dir / "predictions.csv"
    if pred_path.exists() and (run_dir / "scenario.txt").exists():
        scenario = load_scenario(run_dir / "scenario.txt")
        true_task, true_label, pred_class, pred_within = _load_predictions(run_dir)
        result["TIA"] = task_inference_accuracy(pred_class, true_task, scenario)
        ita = {}
        for j in sorted(set(int(v) for v in true_task)):
            mask = true_task == j
            ita[j] = float(100.0 * np.mean(pred_within[mask] == true_label[mask]))
        result["ITA"] = ita
        result["ITA_first"] = ita.get(1)
    config_path = run_dir / "config.txt"
    if config_path.exists():
        result["config_hash"] = config_hash(resolve_config(load_config(config_path)))
    return result


_REPORT_KEYS = ("AA", "FM", "IA", "PIV", "PFTS", "TIA", "ITA_first")


def _mean_over_runs(rows: Sequence[dict]) -> dict:
    mean: dict = {}
    for key in _REPORT_KEYS:
        values = [r[key] for r in rows if r.get(key) is not None]
        if len(values) == len(rows) and values:
            mean[key] = float(np.mean(values))
    return mean


def _format_value(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def report(run_dirs: Sequence[str | Path], out: str | Path | None = None) -> dict:
    """Compute metrics for one or more runs; write the structured report files."""
    if not run_dirs:
        raise ConfigError("report needs at least one run directory")
    rows = [run_metrics(d) for d in run_dirs]
    result: dict = {"runs": rows}
    if len(rows) > 1:
        result["mean"] = _mean_over_runs(rows)

    out_dir = Path(out) if out is not None else Path(run_dirs[0]).parent / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = ["metric_report_format: 1", f"runs: {len(rows)}"]
    headline = result.get("mean", rows[0])
    for key in _REPORT_KEYS:
        lines.append(f"{key}: {_format_value(headline.get(key))}")
    lines.append("per_run:")
    for row in rows:
        lines.append(f"  - run_dir: {row['run_dir']}")
        for key in _REPORT_KEYS:
            lines.append(f"    {key}: {_format_value(row.get(key))}")
        lines.append("    AA_k: [" + ", ".join(f"{v:.4f}" for v in row["AA_k"]) + "]")
        if "f_j" in row:
            lines.append("    f_j: [" + ", ".join(f"{v:.4f}" for v in row["f_j"]) + "]")
        if "ITA" in row:
            rendered = ", ".join(f"{j}: {v:.4f}" for j, v in sorted(row["ITA"].items()))
            lines.append("    ITA: {" + rendered + "}")
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    labels = [Path(r["run_dir"]).name for r in rows]
    depth = max(len(r["AA_k"]) for r in rows)
    curve = ["k," + ",".join(labels)]
    for k in range(depth):
        cells = [str(r["AA_k"][k]) if k < len(r["AA_k"]) else "" for r in rows]
        curve.append(f"{k + 1}," + ",".join(cells))
    (out_dir / "aa_curve.csv").write_text("\n".join(curve) + "\n", encoding="utf-8")

    if all("f_j" in r for r in rows):
        forget = ["task," + ",".join(labels)]
        for j in range(max(len(r["f_j"]) for r in rows)):
            cells = [str(r["f_j"][j]) if j < len(r["f_j"]) else "" for r in rows]
            forget.append(f"{j + 1}," + ",".join(cells))
        (out_dir / "forgetting.csv").write_text("\n".join(forget) + "\n", encoding="utf-8")

    result["report_dir"] = str(out_dir)
    return result


# ---------------------------------------------------------------------------
# Sweeps


_SWEEPABLE = ("lambda_tcon", "lambda_ccon", "lambda_ccd")


def sweep(
    config: Mapping | str | Path,
    grid: Mapping[str, Sequence[float]],
    seeds: Sequence[int] | None = None,
    out: str | Path | None = None,
) -> dict:
    """One run per grid point per seed over the contrastive loss weights."""
    raw = load_config(config) if isinstance(config, (str, Path)) else dict(config)
    base_cfg = resolve_config(raw)
    unknown = set(grid) - set(_SWEEPABLE)
    if unknown:
        raise ConfigError(f"sweep grid supports {_SWEEPABLE}, got unknown keys {sorted(unknown)}")
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("sweep grid must be non-empty with at least one value per key")
    seeds = list(seeds) if seeds is not None else list(base_cfg["seeds"] or [base_cfg["seed"]])
    root = output_root(base_cfg, out)

    axes = [(key, [float(v) for v in grid[key]]) for key in _SWEEPABLE if key in grid]
    points = [dict(zip([k for k, _ in axes], combo)) for combo in product(*[v for _, v in axes])]

    rows = []
    for point in points:
        cell = {key: float(base_cfg["disco"][key]) for key in _SWEEPABLE}
        cell.update(point)
        is_default = all(cell[k] == getattr(DEFAULT_WEIGHTS, k.removeprefix("lambda_")) for k in _SWEEPABLE)
        per_seed = []
        for seed in seeds:
            # Re-resolve from the raw document so the scenario seed follows
            # the run seed unless the user pinned it explicitly.
            overlay = {**raw, "disco": {**raw.get("disco", {}), **cell}}
            cfg = resolve_config(overlay, seed=int(seed))
            tag = "_".join(f"{k.removeprefix('lambda_')}{v:g}" for k, v in cell.items())
            try:
                run_dir = _execute(cfg, build_scenario(cfg), root / f"{cfg['name']}_{tag}_seed{seed}", overwrite=True)
                metrics = run_metrics(run_dir)
                per_seed.append({"seed": int(seed), "status": "ok", "run_dir": str(run_dir), **{
                    k: metrics.get(k) for k in ("AA", "FM", "IA")
                }})
            except Exception as exc:  # keep sweeping; record the failure
                logger.warning("sweep point %s seed %s failed: %s", cell, seed, exc)
                per_seed.append({"seed": int(seed), "status": f"failed: {exc}", "run_dir": None})
        ok = [r for r in per_seed if r["status"] == "ok"]
        row = {**cell, "default": is_default, "runs": per_seed}
        for key in ("AA", "FM", "IA"):
            values = [r[key] for r in ok if r.get(key) is not None]
            row[key] = float(np.mean(values)) if values else None
        rows.append(row)

    out_dir = root / "sweep"
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_lines = ["lambda_tcon,lambda_ccon,lambda_ccd,default,AA,FM,IA"]
    for row in rows:
        csv_lines.append(
            f"{row['lambda_tcon']},{row['lambda_ccon']},{row['lambda_ccd']},"
            f"{'yes' if row['default'] else 'no'},"
            f"{_format_value(row['AA'])},{_format_value(row['FM'])},{_format_value(row['IA'])}"
        )
    (out_dir / "sweep.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    return {"rows": rows, "sweep_dir": str(out_dir), "seeds": seeds}


# ---------------------------------------------------------------------------
# CIL vs CILD comparison


def _delta_cell(value: float | None, base: float | None) -> str:
    if value is None or base is None:
        return _format_value(value)
    return f"{value:.4f}({value - base:+.2f})"


def compare_cil_cild(
    config: Mapping | str | Path,
    seeds: Sequence[int] | None = None,
    out: str | Path | None = None,
) -> dict:
    """Run the same label partition with and without per-task domain shift.

    The CIL arm assigns the first domain of the configured order to every
    task; the CILD arm uses the full order. Means over seeds are tabulated
    side by side with CILD-minus-CIL deltas.
    """
    raw = load_config(config) if isinstance(config, (str, Path)) else dict(config)
    base_cfg = resolve_config(raw)
    order = base_cfg["scenario"]["domain_order"]
    if not order:
        raise ConfigError("compare needs scenario.domain_order naming one domain per task")
    seeds = list(seeds) if seeds is not None else list(base_cfg["seeds"] or [base_cfg["seed"]])
    root = output_root(base_cfg, out)

    arms: dict[str, list[dict]] = {"CIL": [], "CILD": []}
    for seed in seeds:
        cfg = resolve_config(raw, seed=int(seed))
        cild = build_scenario(cfg)
        for arm, scenario in (("CIL", cil_counterpart(cild)), ("CILD", cild)):
            run_dir = _execute(cfg, scenario, root / f"{cfg['name']}_{arm}_seed{seed}", overwrite=True)
            arms[arm].append(run_metrics(run_dir))

    table: dict[str, dict] = {}
    for arm, rows in arms.items():
        table[arm] = _mean_over_runs(rows) if len(rows) > 1 else {k: rows[0].get(k) for k in _REPORT_KEYS}
    deltas = {
        key: (table["CILD"].get(key) - table["CIL"].get(key))
        if table["CILD"].get(key) is not None and table["CIL"].get(key) is not None
        else None
        for key in _REPORT_KEYS
    }

    out_dir = root / "comparison"
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = ("AA", "FM", "PIV", "PFTS")
    lines = ["arm," + ",".join(keys)]
    lines.append("CIL," + ",".join(_format_value(table["CIL"].get(k)) for k in keys))
    lines.append("CILD," + ",".join(_delta_cell(table["CILD"].get(k), table["CIL"].get(k)) for k in keys))
    (out_dir / "comparison.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    text = ["cil_cild_comparison_format: 1", f"seeds: {seeds}"]
    for arm in ("CIL", "CILD"):
        text.append(f"{arm}:")
        for key in keys:
            text.append(f"  {key}: {_format_value(table[arm].get(key))}")
    text.append("delta (CILD - CIL):")
    for key in keys:
        value = deltas.get(key)
        text.append(f"  {key}: {'-' if value is None else f'{value:+.4f}'}")
    (out_dir / "comparison.txt").write_text("\n".join(text) + "\n", encoding="utf-8")

    return {"CIL": table["CIL"], "CILD": table["CILD"], "delta": deltas,
            "per_seed": arms, "comparison_dir": str(out_dir), "seeds": seeds}


# ---------------------------------------------------------------------------
# Post-hoc feature export


def export_features(run_dir: str | Path, out: str | Path | None = None, projected: bool = True) -> Path:
    """Re-export final-stage features from a finished run's saved model."""
    from .engine import dump_features  # local import to keep module load light

    run_dir = Path(run_dir)
    cfg = resolve_config(load_config(run_dir / "config.txt"))
    scenario = load_scenario(run_dir / "scenario.txt")
    dataset = build_dataset(cfg)
    payload = torch.load(run_dir / "model_final.pt", weights_only=False)
    arch = build_arch(cfg)
    if not isinstance(dataset, ArrayDataset):
        raise ConfigError("feature export requires an array-backed dataset")
    input_shape = tuple(np.asarray(dataset.train_x).shape[1:])
    bundle = build_bundle(arch.backbone, input_shape, arch.feature_dim, int(payload["contrast_dim"]), seed=0,
                          hidden_dims=arch.hidden_dims)
    bundle.backbone.load_state_dict(payload["backbone"])
    bundle.projector.load_state_dict(payload["projector"])
    bundle.classifier.expand(tuple(int(c) for c in payload["class_ids"]), torch.Generator().manual_seed(0))
    with torch.no_grad():
        bundle.classifier.weight.copy_(payload["classifier_weight"])
        bundle.classifier.bias.copy_(payload["classifier_bias"])
    target = Path(out) if out is not None else run_dir / ("features_export.csv")
    return dump_features(bundle, scenario, scenario.num_tasks, dataset, target, projected=projected)

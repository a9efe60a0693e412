"""Static plots from run artifacts: accuracy curves and feature scatters."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import AccuracyMatrix, average_accuracy


def _load_matrix(run_dir: Path) -> AccuracyMatrix:
    return AccuracyMatrix.from_csv(run_dir / "accuracy_matrix.csv")


def plot_aa_curve(curves: Mapping[str, Sequence[float]], out_path: Path) -> Path:
    """Mean accuracy after each stage, one line per labelled run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in curves.items():
        ax.plot(range(1, len(values) + 1), values, marker="o", label=label)
    ax.set_xlabel("task")
    ax.set_ylabel("average accuracy after task")
    ax.set_ylim(0, 101)
    ax.grid(alpha=0.3)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_first_task_curve(curves: Mapping[str, Sequence[float]], out_path: Path) -> Path:
    """Accuracy of the first task at every later stage."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in curves.items():
        ax.plot(range(1, len(values) + 1), values, marker="s", label=label)
    ax.set_xlabel("task")
    ax.set_ylabel("first-task accuracy")
    ax.set_ylim(0, 101)
    ax.grid(alpha=0.3)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def load_feature_dump(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = path.read_text(encoding="utf-8").strip().splitlines()[1:]
    data = np.asarray([[float(v) for v in row.split(",")] for row in rows])
    return data[:, :-2], data[:, -2].astype(int), data[:, -1].astype(int)


def plot_feature_scatter(feature_file: Path, out_path: Path) -> Path:
    """2-component principal-axis scatter of a feature dump, colored by task."""
    features, _, tasks = load_feature_dump(feature_file)
    centered = features - features.mean(axis=0, keepdims=True)
    if centered.shape[1] > 2:
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        points = centered @ vt[:2].T
    else:
        points = centered
    fig, ax = plt.subplots(figsize=(5, 5))
    for task in sorted(set(tasks.tolist())):
        mask = tasks == task
        ax.scatter(points[mask, 0], points[mask, 1], s=8, alpha=0.6, label=f"task {task}")
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_run(run_dirs: Sequence[str | Path], out: str | Path | None = None) -> list[Path]:
    """Emit every applicable plot for one or more runs (curves overlay)."""
    dirs = [Path(d) for d in run_dirs]
    out_dir = Path(out) if out is not None else dirs[0] / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    aa_curves, first_curves = {}, {}
    for run_dir in dirs:
        matrix = _load_matrix(run_dir)
        aa_k, _ = average_accuracy(matrix)
        aa_curves[run_dir.name] = aa_k
        first_curves[run_dir.name] = list(matrix.column(1))
    written = [
        plot_aa_curve(aa_curves, out_dir / "aa_curve.png"),
        plot_first_task_curve(first_curves, out_dir / "first_task.png"),
    ]
    for run_dir in dirs:
        feature_files = sorted((run_dir / "features").glob("after_task_*.csv"))
        if feature_files:
            name = f"features_{run_dir.name}.png" if len(dirs) > 1 else "features.png"
            written.append(plot_feature_scatter(feature_files[-1], out_dir / name))
    return written

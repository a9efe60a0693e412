"""Command-line surface: run, report, sweep, compare, plot, export-features.

Exit codes are a stable contract: 0 success, 1 configuration error,
2 runtime failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .config import ConfigError
from .engine import EngineConfigError
from .scenario import ScenarioError

_CONFIG_ERRORS = (ConfigError, EngineConfigError, ScenarioError, click.UsageError)


@click.group(name="disco")
def cli() -> None:
    """Continual-learning experiments with contrastive task separation."""


@cli.command(name="run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output root (beats DISCO_OUT).")
@click.option("--force", is_flag=True, help="Overwrite an existing run directory.")
def run_cmd(config_path: str, seed: int | None, out: str | None, force: bool) -> None:
    """Execute one experiment and write its run directory."""
    from .harness import run

    run_dir = run(config_path, seed=seed, out=out, overwrite=force)
    click.echo(f"run written to {run_dir}")


@cli.command(name="report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None)
def report_cmd(run_dirs: tuple[str, ...], out: str | None) -> None:
    """Compute the metric report over one or more finished runs."""
    from .harness import report

    result = report(list(run_dirs), out=out)
    headline = result.get("mean", result["runs"][0])
    for key in ("AA", "FM", "IA", "PIV", "PFTS", "TIA", "ITA_first"):
        value = headline.get(key)
        if value is None:
            if key in ("PIV", "PFTS"):
                click.echo(f"warning: {key} omitted (needs at least 3 snapshots)", err=True)
            continue
        click.echo(f"{key}: {value:.4f}")
    click.echo(f"report written to {result['report_dir']}")


def _parse_grid(entries: tuple[str, ...]) -> dict[str, list[float]]:
    grid: dict[str, list[float]] = {}
    for entry in entries:
        if "=" not in entry:
            raise ConfigError(f"grid entries look like key=v1,v2 — got {entry!r}")
        key, _, values = entry.partition("=")
        try:
            grid[key.strip()] = [float(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"grid values for {key!r} must be numbers, got {values!r}") from None
    return grid


@cli.command(name="sweep")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_entries", multiple=True, required=True,
              help="Axis as key=v1,v2 (lambda_tcon / lambda_ccon / lambda_ccd); repeatable.")
@click.option("--seeds", type=int, default=None, help="Number of seeds 0..N-1 to run per grid point.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def sweep_cmd(config_path: str, grid_entries: tuple[str, ...], seeds: int | None, out: str | None) -> None:
    """Run a grid over the contrastive loss weights."""
    from .harness import sweep

    seed_list = list(range(seeds)) if seeds is not None else None
    result = sweep(config_path, _parse_grid(grid_entries), seeds=seed_list, out=out)
    for row in result["rows"]:
        flag = " (default)" if row["default"] else ""
        click.echo(
            f"tcon={row['lambda_tcon']:g} ccon={row['lambda_ccon']:g} ccd={row['lambda_ccd']:g}"
            f" AA={row['AA'] if row['AA'] is not None else '-'} FM={row['FM'] if row['FM'] is not None else '-'}{flag}"
        )
    click.echo(f"sweep written to {result['sweep_dir']}")


@cli.command(name="compare")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seeds", type=int, default=None, help="Number of seeds 0..N-1 per arm.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def compare_cmd(config_path: str, seeds: int | None, out: str | None) -> None:
    """Run the same class split with and without per-task domain shift."""
    from .harness import compare_cil_cild

    seed_list = list(range(seeds)) if seeds is not None else None
    result = compare_cil_cild(config_path, seeds=seed_list, out=out)
    for arm in ("CIL", "CILD"):
        cells = ", ".join(
            f"{k}={result[arm].get(k):.4f}" for k in ("AA", "FM", "PIV", "PFTS") if result[arm].get(k) is not None
        )
        click.echo(f"{arm}: {cells}")
    click.echo(f"comparison written to {result['comparison_dir']}")


@cli.command(name="plot")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None)
def plot_cmd(run_dirs: tuple[str, ...], out: str | None) -> None:
    """Emit accuracy curves and feature scatters as image files."""
    from .plotting import plot_run

    for path in plot_run(list(run_dirs), out=out):
        click.echo(f"wrote {path}")


@cli.command(name="export-features")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--raw", is_flag=True, help="Export extractor features instead of projected ones.")
def export_features_cmd(run_dir: str, out: str | None, raw: bool) -> None:
    """Re-export final-stage features from a finished run."""
    from .harness import export_features

    path = export_features(run_dir, out=out, projected=not raw)
    click.echo(f"wrote {path}")


def main(argv: list[str] | None = None) -> int:
    """Dispatch with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except _CONFIG_ERRORS as exc:
        click.echo(f"configuration error: {exc}", err=True)
        return 1
    except click.exceptions.Exit as exc:  # e.g. --help
        return int(exc.exit_code)
    except click.Abort:
        return 1
    except Exception as exc:
        click.echo(f"runtime failure: {exc}", err=True)
        return 2
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

"""Command-line front end: run experiment manifests, build reports, and
serve the interactive session API."""

from __future__ import annotations

import os
from pathlib import Path

import click

from .harness import (
    compute_ranks,
    execute_manifest,
    read_summary,
    summarize,
    write_curves_csv,
    write_ranks_csv,
)
from .manifest import ManifestError, load_manifest


@click.group()
def main():
    """Preferential batch Bayesian optimization toolkit."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def run(config_path: str, workers: int, out_dir: str):
    """Execute every run in a manifest; write traces and summary.csv."""
    try:
        manifest = load_manifest(config_path)
    except ManifestError as exc:
        raise click.ClickException(str(exc))
    env_seed = os.environ.get("PREFBATCH_SEED")
    if env_seed is not None:
        try:
            manifest = manifest.override_seeds(int(env_seed))
        except ValueError:
            raise click.ClickException(f"PREFBATCH_SEED must be an integer, got {env_seed!r}")
        click.echo(f"PREFBATCH_SEED={env_seed}: overriding all manifest seeds")
    summary = execute_manifest(manifest, out_dir, workers=workers)
    click.echo(f"{len(manifest.runs)} runs complete; summary at {summary}")


@main.command()
@click.option("--summary", "summary_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--figures/--no-figures", default=True, show_default=True)
def report(summary_path: str, out_dir: str, figures: bool):
    """Aggregate a summary CSV into mean curves, rank tables, and figures."""
    try:
        rows = read_summary(summary_path)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    points = summarize(rows)
    ranks = compute_ranks(points)
    write_curves_csv(points, out / "curves.csv")
    write_ranks_csv(ranks, out / "ranks.csv")
    written = [out / "curves.csv", out / "ranks.csv"]
    if figures and points:
        from .figures import render_curve_figures, render_rank_figures

        written += render_curve_figures(points, out)
        written += render_rank_figures(ranks, out)
    for path in written:
        click.echo(f"wrote {path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option(
    "--sessions-dir",
    default="./sessions",
    show_default=True,
    type=click.Path(),
    help="Directory for the append-only session event logs.",
)
def serve(host: str, port: int, sessions_dir: str):
    """Serve the interactive preference-session HTTP API."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(sessions_dir), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()

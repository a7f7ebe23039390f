"""Figure rendering for the report path.

Renders the mean best-so-far curves (with standard-error bands) and the
mean-rank curves to PNG files next to the delimited report output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

from .harness import CurvePoint  # noqa: E402

__all__ = ["render_curve_figures", "render_rank_figures"]


def render_curve_figures(points: list[CurvePoint], out_dir: str | Path) -> list[Path]:
    """One figure per (objective, q): mean curve +- 1 s.e. per method."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    panels: dict[tuple, dict[str, list[CurvePoint]]] = {}
    for p in points:
        panels.setdefault((p.objective, p.q), {}).setdefault(p.method, []).append(p)

    written = []
    for (objective, q), methods in sorted(panels.items()):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for method in sorted(methods):
            ps = sorted(methods[method], key=lambda p: p.iteration)
            x = np.array([p.evaluations for p in ps])
            mean = np.array([p.mean for p in ps])
            se = np.array([p.se for p in ps])
            style = "--" if method.startswith("random") else "-"
            color = "black" if method.startswith("random") else None
            (line,) = ax.plot(x, mean, style, label=method, color=color)
            ax.fill_between(x, mean - se, mean + se, alpha=0.2, color=line.get_color())
        ax.set_xlabel("function evaluations")
        ax.set_ylabel("best value so far (scaled)")
        ax.set_title(f"{objective}, batch size {q}")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"curves_{objective}_q{q}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def render_rank_figures(
    ranks: dict[int, dict[str, np.ndarray]], out_dir: str | Path
) -> list[Path]:
    """One figure per batch size: mean rank per method over evaluations."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for q in sorted(ranks):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for method in sorted(ranks[q]):
            curve = ranks[q][method]
            x = (np.arange(len(curve)) + 1) * q
            style = "--" if method.startswith("random") else "-"
            color = "black" if method.startswith("random") else None
            ax.plot(x, curve, style, label=method, color=color)
        ax.set_xlabel("function evaluations")
        ax.set_ylabel("mean rank (lower is better)")
        ax.set_title(f"method ranks, batch size {q}")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"ranks_q{q}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written

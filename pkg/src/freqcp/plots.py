"""Matplotlib figure rendering for the report command (headless)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import EvalReport


def plot_metric_vs_alpha(
    reports: Sequence[EvalReport],
    metric: str,
    ylabel: str,
    path,
    diagonal: bool = False,
) -> Path:
    """One curve per report of an aggregate metric over the alpha grid."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for report in reports:
        rows = sorted(report.rows, key=lambda r: r.alpha)
        ax.plot(
            [r.alpha for r in rows],
            [getattr(r, metric) for r in rows],
            marker="o",
            markersize=4,
            label=report.label,
        )
    if diagonal:
        ax.plot([0.0, 1.0], [0.0, 1.0], linestyle="--", color="gray",
                linewidth=1, label="target")
    ax.set_xlabel(r"risk level $\alpha$")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_figures(reports: Sequence[EvalReport], out_dir) -> list[Path]:
    """Render the standard per-alpha curves; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        plot_metric_vs_alpha(reports, "emr", "empirical miscoverage rate",
                             out_dir / "emr_vs_alpha.png", diagonal=True),
        plot_metric_vs_alpha(reports, "apss", "average prediction set size",
                             out_dir / "apss_vs_alpha.png"),
    ]

"""Cross-run summary tables assembled from evaluation reports.

Three table layouts: APSS per label over the alpha grid, EMR per label over
split ratios at one alpha, and AUROC per label with frequency/logit columns.
Cells with no backing data carry an explicit gap marker rather than a silent
zero.
"""

from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Sequence

from .metrics import EvalReport, EvalRow

GAP = "NA"
ALPHA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
SPLIT_GRID = (0.1, 0.3, 0.5, 0.7)

_ALPHA_TOL = 1e-9


def _row_at(report: EvalReport, alpha: float) -> EvalRow | None:
    for row in report.rows:
        if abs(row.alpha - alpha) <= _ALPHA_TOL:
            return row
    return None


def _fmt(value: float | None) -> str:
    return GAP if value is None else f"{value:.4f}"


def apss_table(
    reports: Sequence[EvalReport], alphas: Sequence[float] = ALPHA_GRID
) -> list[list[str]]:
    """One row per report label; one APSS column per alpha on the grid."""
    table = [["label"] + [f"{a:g}" for a in alphas]]
    for report in reports:
        cells = [report.label]
        for a in alphas:
            row = _row_at(report, a)
            cells.append(_fmt(row.apss if row else None))
        table.append(cells)
    return table


def emr_split_table(
    reports: Sequence[EvalReport],
    alpha: float = 0.1,
    split_ratios: Sequence[float] = SPLIT_GRID,
) -> list[list[str]]:
    """EMR at one alpha across split ratios; rows grouped by report label."""
    table = [["label"] + [f"split={r:g}" for r in split_ratios]]
    labels: list[str] = []
    by_key: dict[tuple[str, float], EvalReport] = {}
    for report in reports:
        if report.label not in labels:
            labels.append(report.label)
        by_key[(report.label, round(report.split_ratio, 6))] = report
    for label in labels:
        cells = [label]
        for ratio in split_ratios:
            report = by_key.get((label, round(ratio, 6)))
            row = _row_at(report, alpha) if report else None
            cells.append(_fmt(row.emr if row else None))
        table.append(cells)
    return table


def auroc_table(reports: Sequence[EvalReport]) -> list[list[str]]:
    """One row per report label with frequency and logit AUROC columns."""
    table = [["label", "frequency", "logit"]]
    for report in reports:
        table.append(
            [report.label, _fmt(report.auroc_frequency), _fmt(report.auroc_logit)]
        )
    return table


def curve_rows(report: EvalReport) -> list[list[str]]:
    """Aggregate per-alpha curve of one report, ready to plot from CSV."""
    rows = [["alpha", "emr", "apss", "coverage", "empty_set_fraction"]]
    for row in sorted(report.rows, key=lambda r: r.alpha):
        rows.append(
            [f"{row.alpha:g}", _fmt(row.emr), _fmt(row.apss),
             _fmt(row.coverage), _fmt(row.empty_set_fraction)]
        )
    return rows


def write_table(rows: Sequence[Sequence[str]], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


def slug(label: str) -> str:
    cleaned = re.sub(r"[^A-Za-z0-9._-]+", "-", label).strip("-")
    return cleaned or "report"

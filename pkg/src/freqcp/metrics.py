"""Prediction-set evaluation: miscoverage, set size, AUROC, and split sweeps.

``sweep`` re-splits a dataset into calibration and test sides over many
seeded trials and reports, per risk level, the empirical miscoverage rate
(EMR), the average prediction set size (APSS), the empty-set fraction, and a
per-trial AUROC of the argmax confidence against argmax correctness.  Trials
use independent PRNG streams derived from (seed, trial index), so results do
not depend on scheduling.

The sweep evaluates whole splits on numpy arrays; the array path reproduces
the scalar operations in :mod:`freqcp.conformal` exactly (integer score
comparisons in frequency mode, plain float comparisons in logit mode) and the
test suite cross-checks the two item by item.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .conformal import (
    CalibrationMethod,
    PredictionSet,
    exact_level,
    pvalue_min_count,
)
from .mcqa import FrequencyTable, McqaItem, ScoreMode

CSV_COLUMNS = ("alpha", "emr", "apss", "coverage", "empty_set_fraction", "trial")


class DegenerateAurocError(ValueError):
    """AUROC is undefined without at least one correct and one incorrect example."""


def emr(sets: Sequence[PredictionSet], truths: Sequence[int]) -> float:
    """Fraction of items whose true option is missing from its prediction set."""
    if len(sets) != len(truths):
        raise ValueError(f"length mismatch: {len(sets)} sets vs {len(truths)} truths")
    if not sets:
        raise ValueError("need at least one prediction set")
    misses = sum(1 for s, t in zip(sets, truths) if t not in s.members)
    return misses / len(sets)


def apss(sets: Sequence[PredictionSet]) -> float:
    """Mean prediction-set size."""
    if not sets:
        raise ValueError("need at least one prediction set")
    return sum(s.size for s in sets) / len(sets)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's average rank."""
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    mid = upper - (counts - 1) / 2.0
    return mid[inverse]


def auroc(confidences: Sequence[float], correct: Sequence[bool]) -> float:
    """P(confidence of a correct item > confidence of an incorrect one), ties half.

    Computed from average ranks (the Mann-Whitney statistic), which equals
    exhaustive cross-pair counting.
    """
    conf = np.asarray(confidences, dtype=float)
    label = np.asarray(correct, dtype=bool)
    if conf.ndim != 1 or conf.shape != label.shape:
        raise ValueError("confidences and correct must be equal-length 1-d sequences")
    n_pos = int(label.sum())
    n_neg = int(label.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateAurocError(
            "need at least one correct and one incorrect example"
        )
    ranks = _average_ranks(conf)
    u = ranks[label].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class EvalRow:
    """Metrics at one risk level, for one trial or as the mean over trials."""

    alpha: float
    emr: float
    apss: float
    coverage: float
    n_test: int
    empty_set_fraction: float
    trial: int | None = None  # None marks an aggregate row


@dataclass
class EvalReport:
    """Sweep output: aggregate rows per alpha plus the trial rows behind them."""

    rows: list[EvalRow]
    trial_rows: list[EvalRow]
    auroc_frequency: float | None
    auroc_logit: float | None
    split_ratio: float
    seed: int
    trials: int
    method: str
    label: str


def trial_streams(seed: int, trials: int) -> list[np.random.Generator]:
    """Independent per-trial PRNG streams derived from (seed, trial index)."""
    return [np.random.default_rng(ss) for ss in np.random.SeedSequence(seed).spawn(trials)]


def split_indices(
    n_items: int, split_ratio: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle and split item indices into (calibration, test)."""
    if not 0.0 < split_ratio < 1.0:
        raise ValueError(f"split_ratio must lie strictly between 0 and 1, got {split_ratio}")
    n_cal = int(round(split_ratio * n_items))
    if n_cal < 1 or n_cal >= n_items:
        raise ValueError(
            f"split_ratio {split_ratio} leaves an empty side for {n_items} items"
        )
    perm = rng.permutation(n_items)
    return perm[:n_cal], perm[n_cal:]


@dataclass(frozen=True)
class _ScoreArrays:
    """Dense per-item arrays behind a sweep; padded options never match."""

    scores: np.ndarray        # (N, C_max) float, or int when exact_m is set
    probs: np.ndarray         # (N, C_max) float, padded with -1
    valid: np.ndarray         # (N, C_max) bool
    truth: np.ndarray         # (N,) int
    exact_m: int | None       # uniform sample count in frequency mode


def _build_arrays(
    items: Sequence[McqaItem], tables: Sequence[FrequencyTable]
) -> _ScoreArrays:
    if len(items) != len(tables):
        raise ValueError(f"{len(items)} items but {len(tables)} tables")
    if not items:
        raise ValueError("no items to evaluate")
    modes = {t.mode for t in tables}
    if len(modes) != 1:
        raise ValueError("tables mix frequency and logit modes")
    (mode,) = modes
    for item, table in zip(items, tables):
        if item.id != table.item_id:
            raise ValueError(f"table {table.item_id!r} does not match item {item.id!r}")
        if item.num_options != table.num_options:
            raise ValueError(f"item {item.id!r}: table has wrong option count")

    n = len(items)
    c_max = max(t.num_options for t in tables)
    truth = np.array([it.truth for it in items], dtype=np.int64)
    valid = np.zeros((n, c_max), dtype=bool)
    probs = np.full((n, c_max), -1.0)
    for i, table in enumerate(tables):
        valid[i, : table.num_options] = True
        probs[i, : table.num_options] = table.probs

    if mode is ScoreMode.FREQUENCY:
        ms = {t.m for t in tables}
        if len(ms) == 1:
            (m,) = ms
            scores = np.full((n, c_max), m + 1, dtype=np.int64)
            for i, table in enumerate(tables):
                counts = np.asarray(table.counts, dtype=np.int64)
                scores[i, : table.num_options] = m - counts
            return _ScoreArrays(scores, probs, valid, truth, m)

    scores = np.full((n, c_max), np.inf)
    for i, table in enumerate(tables):
        if table.mode is ScoreMode.FREQUENCY:
            counts = np.asarray(table.counts, dtype=np.float64)
            scores[i, : table.num_options] = (table.m - counts) / table.m
        else:
            scores[i, : table.num_options] = 1.0 - np.asarray(table.probs)
    return _ScoreArrays(scores, probs, valid, truth, None)


@dataclass(frozen=True)
class _AlphaCutoffs:
    """Exact per-alpha rank cutoffs for a fixed calibration size."""

    quantile_rank: int    # k; full sets when k > n_cal
    risk_allowed: int     # max miscovered count; -1 when the bound is unreachable
    pvalue_count: int     # min #{cal >= score} for inclusion


def _cutoffs(alpha: float, n_cal: int) -> _AlphaCutoffs:
    level = exact_level(alpha)
    k = math.ceil((n_cal + 1) * (1 - level))
    bound_num = level * (n_cal + 1) - 1
    allowed = math.floor(bound_num) if bound_num >= 0 else -1
    return _AlphaCutoffs(
        quantile_rank=k,
        risk_allowed=allowed,
        pvalue_count=pvalue_min_count(n_cal, alpha),
    )


def _sets_matrix(
    method: CalibrationMethod,
    cut: _AlphaCutoffs,
    cal_sorted: np.ndarray,
    test_scores: np.ndarray,
    test_valid: np.ndarray,
) -> np.ndarray:
    n_cal = cal_sorted.shape[0]
    if method is CalibrationMethod.QUANTILE:
        if cut.quantile_rank > n_cal:
            return test_valid.copy()
        return (test_scores <= cal_sorted[cut.quantile_rank - 1]) & test_valid
    if method is CalibrationMethod.RISK_CONTROL:
        if cut.risk_allowed < 0:
            return test_valid.copy()  # threshold forced to 1: every option stays
        return (test_scores <= cal_sorted[n_cal - 1 - cut.risk_allowed]) & test_valid
    counts_geq = n_cal - np.searchsorted(cal_sorted, test_scores, side="left")
    return (counts_geq >= cut.pvalue_count) & test_valid


def sweep(
    items: Sequence[McqaItem],
    tables: Sequence[FrequencyTable],
    alphas: Sequence[float],
    method: "CalibrationMethod | str",
    split_ratio: float = 0.5,
    trials: int = 1,
    seed: int = 0,
    *,
    logit_tables: Sequence[FrequencyTable] | None = None,
    label: str = "eval",
) -> EvalReport:
    """Randomized calibration/test resplit evaluation over a grid of risk levels.

    Each trial shuffles the items with its own PRNG stream, splits off a
    calibration fraction of ``split_ratio``, calibrates once per alpha with
    the chosen method, and scores prediction sets on the test side.  Rows are
    reported per trial and as means over trials.

    AUROC is computed once per trial from the argmax option's probability
    against whether the argmax equals the truth, then averaged over the
    trials where it is defined (a trial with all-correct or all-wrong argmax
    predictions has no AUROC).  When ``logit_tables`` is supplied alongside
    frequency tables, a logit AUROC is computed on the same splits.
    """
    method = CalibrationMethod(method)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not alphas:
        raise ValueError("need at least one alpha")
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise ValueError(f"alpha {a} outside (0, 1)")
    alphas = sorted({float(a) for a in alphas})

    arrays = _build_arrays(items, tables)
    extra = None
    if logit_tables is not None:
        if any(t.mode is not ScoreMode.LOGIT for t in logit_tables):
            raise ValueError("logit_tables must be in logit mode")
        if any(t.mode is not ScoreMode.FREQUENCY for t in tables):
            raise ValueError("logit_tables only apply alongside frequency tables")
        extra = _build_arrays(items, logit_tables)

    n_items = len(items)
    truth_scores = arrays.scores[np.arange(n_items), arrays.truth]
    cutoffs = None  # depends on n_cal, fixed after the first split

    trial_rows: list[EvalRow] = []
    per_alpha: dict[float, dict[str, list[float]]] = {
        a: {"emr": [], "apss": [], "empty": []} for a in alphas
    }
    aurocs_primary: list[float] = []
    aurocs_extra: list[float] = []
    n_test = 0

    for trial, rng in enumerate(trial_streams(seed, trials)):
        cal_idx, test_idx = split_indices(n_items, split_ratio, rng)
        n_cal = cal_idx.shape[0]
        n_test = test_idx.shape[0]
        if cutoffs is None:
            cutoffs = {a: _cutoffs(a, n_cal) for a in alphas}

        cal_sorted = np.sort(truth_scores[cal_idx])
        test_scores = arrays.scores[test_idx]
        test_valid = arrays.valid[test_idx]
        test_truth = arrays.truth[test_idx]

        for a in alphas:
            sets = _sets_matrix(method, cutoffs[a], cal_sorted, test_scores, test_valid)
            covered = sets[np.arange(n_test), test_truth]
            sizes = sets.sum(axis=1)
            emr_t = (n_test - int(covered.sum())) / n_test
            row = EvalRow(
                alpha=a,
                emr=emr_t,
                apss=float(sizes.mean()),
                coverage=1.0 - emr_t,
                n_test=n_test,
                empty_set_fraction=int((sizes == 0).sum()) / n_test,
                trial=trial,
            )
            trial_rows.append(row)
            per_alpha[a]["emr"].append(row.emr)
            per_alpha[a]["apss"].append(row.apss)
            per_alpha[a]["empty"].append(row.empty_set_fraction)

        value = _trial_auroc(arrays, test_idx)
        if value is not None:
            aurocs_primary.append(value)
        if extra is not None:
            value = _trial_auroc(extra, test_idx)
            if value is not None:
                aurocs_extra.append(value)

    rows = []
    for a in alphas:
        mean_emr = float(np.mean(per_alpha[a]["emr"]))
        rows.append(
            EvalRow(
                alpha=a,
                emr=mean_emr,
                apss=float(np.mean(per_alpha[a]["apss"])),
                coverage=1.0 - mean_emr,
                n_test=n_test,
                empty_set_fraction=float(np.mean(per_alpha[a]["empty"])),
                trial=None,
            )
        )

    primary_auroc = float(np.mean(aurocs_primary)) if aurocs_primary else None
    extra_auroc = float(np.mean(aurocs_extra)) if aurocs_extra else None
    mode = tables[0].mode
    return EvalReport(
        rows=rows,
        trial_rows=trial_rows,
        auroc_frequency=primary_auroc if mode is ScoreMode.FREQUENCY else None,
        auroc_logit=extra_auroc if mode is ScoreMode.FREQUENCY else primary_auroc,
        split_ratio=float(split_ratio),
        seed=int(seed),
        trials=int(trials),
        method=method.value,
        label=label,
    )


def _trial_auroc(arrays: _ScoreArrays, test_idx: np.ndarray) -> float | None:
    probs = arrays.probs[test_idx]
    pred = probs.argmax(axis=1)  # padded columns hold -1, never the argmax
    conf = probs[np.arange(test_idx.shape[0]), pred]
    correct = pred == arrays.truth[test_idx]
    try:
        return auroc(conf, correct)
    except DegenerateAurocError:
        return None


def _fmt(value: float) -> str:
    return repr(float(value))


def write_report_csv(report: EvalReport, path) -> None:
    """One row per alpha per trial, then aggregate rows with trial='mean'."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in report.trial_rows:
            writer.writerow(
                [_fmt(row.alpha), _fmt(row.emr), _fmt(row.apss), _fmt(row.coverage),
                 _fmt(row.empty_set_fraction), row.trial]
            )
        for row in report.rows:
            writer.writerow(
                [_fmt(row.alpha), _fmt(row.emr), _fmt(row.apss), _fmt(row.coverage),
                 _fmt(row.empty_set_fraction), "mean"]
            )


def _row_dict(row: EvalRow) -> dict:
    return {
        "kind": "row",
        "alpha": row.alpha,
        "emr": row.emr,
        "apss": row.apss,
        "coverage": row.coverage,
        "n_test": row.n_test,
        "empty_set_fraction": row.empty_set_fraction,
        "trial": row.trial,
    }


def write_report_jsonl(report: EvalReport, path) -> None:
    """Self-describing JSONL: one header object, then one object per row."""
    header = {
        "kind": "report",
        "label": report.label,
        "method": report.method,
        "split_ratio": report.split_ratio,
        "seed": report.seed,
        "trials": report.trials,
        "auroc_frequency": report.auroc_frequency,
        "auroc_logit": report.auroc_logit,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in report.trial_rows + report.rows:
            fh.write(json.dumps(_row_dict(row), sort_keys=True) + "\n")


def read_report_jsonl(path) -> EvalReport:
    """Inverse of :func:`write_report_jsonl`."""
    rows: list[EvalRow] = []
    trial_rows: list[EvalRow] = []
    header: dict | None = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                if obj.get("kind") == "report":
                    header = obj
                    continue
                row = EvalRow(
                    alpha=obj["alpha"],
                    emr=obj["emr"],
                    apss=obj["apss"],
                    coverage=obj["coverage"],
                    n_test=obj["n_test"],
                    empty_set_fraction=obj["empty_set_fraction"],
                    trial=obj["trial"],
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad report line: {exc!r}") from exc
            (trial_rows if row.trial is not None else rows).append(row)
    if header is None:
        raise ValueError(f"{path}: missing report header line")
    return EvalReport(
        rows=rows,
        trial_rows=trial_rows,
        auroc_frequency=header["auroc_frequency"],
        auroc_logit=header["auroc_logit"],
        split_ratio=header["split_ratio"],
        seed=header["seed"],
        trials=header["trials"],
        method=header["method"],
        label=header["label"],
    )

"""Non-conformity scoring, calibration procedures, and prediction sets.

Three calibration procedures turn held-out scores into prediction sets with a
user-chosen error rate ``alpha``:

* quantile -- threshold at the ceil((n+1)(1-alpha))-th smallest calibration
  score; a test option enters the set when its score is <= the threshold.
* pvalue -- an option enters when #{cal scores >= its score} / (n+1) > alpha.
* risk -- the smallest threshold t whose empirical miscoverage L_n(t)
  satisfies L_n(t) <= (alpha(n+1) - 1) / n.  With the default indicator
  loss this picks the same order statistic as the quantile rule.

All comparisons are inclusive, which keeps the coverage bound valid under
ties.  Rank cutoffs are computed with exact rational arithmetic on the
shortest-decimal reading of ``alpha`` (so alpha=0.3 behaves as 3/10, not as
its binary approximation), and frequency-mode scores compare by their integer
(m - count, m) form: ties at small m are common and float equality is
fragile.  Logit-mode scores compare as plain floats, with no epsilon.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .mcqa import FrequencyTable, ScoreMode

# Threshold sentinel: the requested rank exceeds the calibration size, so
# every prediction set is the full option set.
FULL_SET_THRESHOLD = math.inf


def exact_level(alpha: float) -> Fraction:
    """Exact rational for a risk level, read from its shortest decimal form."""
    return Fraction(Decimal(str(float(alpha))))


def _check_level(alpha: float, name: str = "alpha") -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"{name} must lie strictly between 0 and 1, got {alpha}")


@dataclass(frozen=True)
class NonconformityScore:
    """Disagreement between an option and an item: one minus its probability.

    ``exact`` carries the integer form (m - count, m) in frequency mode so
    rank comparisons are exact where float division would have to round.
    """

    value: float
    exact: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"score value {self.value} outside [0, 1]")
        if self.exact is not None:
            num, den = self.exact
            if den < 1 or not 0 <= num <= den:
                raise ValueError(f"bad exact score {self.exact}")
            if self.value != num / den:
                raise ValueError(f"score value {self.value} != {num}/{den}")

    @property
    def key(self) -> "Fraction | float":
        """Comparison key; an exact rational whenever the integer form exists."""
        if self.exact is not None:
            return Fraction(self.exact[0], self.exact[1])
        return self.value


class CalibrationMethod(Enum):
    QUANTILE = "quantile"
    PVALUE = "pvalue"
    RISK_CONTROL = "risk"


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of one calibration run; enough to build prediction sets.

    ``threshold`` is the score cutoff for the quantile and risk methods
    (``FULL_SET_THRESHOLD`` when the requested rank is infeasible) and
    ``None`` for the p-value method, which thresholds p-values instead.
    ``warning`` flags a risk calibration whose bound was unreachable, with
    the threshold forced to 1.
    """

    method: CalibrationMethod
    alpha: float
    threshold: float | None
    n_cal: int
    cal_scores: tuple[NonconformityScore, ...]
    warning: bool = False

    def to_json_dict(self) -> dict:
        """Summary dict matching the documented calibration JSON schema."""
        if self.threshold is None:
            threshold = None
        elif math.isinf(self.threshold):
            threshold = "inf"
        else:
            threshold = self.threshold
        return {
            "method": self.method.value,
            "alpha": self.alpha,
            "threshold": threshold,
            "n_cal": self.n_cal,
            "warning": self.warning,
        }


@dataclass(frozen=True)
class PredictionSet:
    """Set of option indices kept for one item; may be empty."""

    item_id: str
    members: frozenset[int]

    def __post_init__(self) -> None:
        if not isinstance(self.members, frozenset):
            object.__setattr__(self, "members", frozenset(self.members))

    @property
    def size(self) -> int:
        return len(self.members)

    def covers(self, truth: int) -> bool:
        return truth in self.members


def nonconformity(table: FrequencyTable, option: int) -> NonconformityScore:
    """Score one option of one item: 1 - its probability.

    In frequency mode the value is computed as (m - count) / m so it equals
    its integer form exactly.
    """
    if not 0 <= option < table.num_options:
        raise ValueError(
            f"table {table.item_id!r}: option {option} outside [0, {table.num_options})"
        )
    if table.mode is ScoreMode.FREQUENCY:
        assert table.counts is not None and table.m is not None
        num = table.m - table.counts[option]
        return NonconformityScore(value=num / table.m, exact=(num, table.m))
    return NonconformityScore(value=1.0 - table.probs[option])


def _sorted_scores(cal_scores: Iterable[NonconformityScore]) -> list[NonconformityScore]:
    scores = sorted(cal_scores, key=lambda s: s.key)
    if not scores:
        raise ValueError("empty calibration set")
    return scores


def calibrate_quantile(
    cal_scores: Iterable[NonconformityScore], alpha: float
) -> CalibrationResult:
    """Threshold at the ceil((n+1)(1-alpha))-th smallest calibration score.

    When that rank exceeds n, no finite threshold can honor the guarantee for
    this calibration size and the threshold becomes ``FULL_SET_THRESHOLD``.
    """
    _check_level(alpha)
    scores = _sorted_scores(cal_scores)
    n = len(scores)
    k = math.ceil((n + 1) * (1 - exact_level(alpha)))
    threshold = FULL_SET_THRESHOLD if k > n else scores[k - 1].value
    return CalibrationResult(
        method=CalibrationMethod.QUANTILE,
        alpha=float(alpha),
        threshold=threshold,
        n_cal=n,
        cal_scores=tuple(scores),
    )


def predict_set_threshold(table: FrequencyTable, threshold: float) -> PredictionSet:
    """Options whose score is <= threshold, inclusive; +inf keeps them all."""
    members = frozenset(
        j for j in range(table.num_options) if nonconformity(table, j).value <= threshold
    )
    return PredictionSet(item_id=table.item_id, members=members)


def pvalue(
    cal_scores: Sequence[NonconformityScore], test_score: NonconformityScore
) -> float:
    """Fraction, over n+1, of calibration scores >= the test score.

    Ties count as >=; frequency-mode scores compare by their exact integer
    rank.
    """
    if not cal_scores:
        raise ValueError("empty calibration set")
    test_key = test_score.key
    count = sum(1 for s in cal_scores if s.key >= test_key)
    return count / (len(cal_scores) + 1)


def pvalue_min_count(n_cal: int, epsilon: float) -> int:
    """Smallest #{cal >= score} for which count/(n+1) strictly exceeds epsilon."""
    return math.floor(exact_level(epsilon) * (n_cal + 1)) + 1


def predict_set_pvalue(
    cal_scores: Sequence[NonconformityScore], table: FrequencyTable, epsilon: float
) -> PredictionSet:
    """Options whose p-value exceeds epsilon.

    Membership is decided on the integer count #{cal >= score} so the
    comparison against epsilon is exact rather than a float-vs-float test.
    """
    _check_level(epsilon, "epsilon")
    if not cal_scores:
        raise ValueError("empty calibration set")
    min_count = pvalue_min_count(len(cal_scores), epsilon)
    keys = [s.key for s in cal_scores]
    members = set()
    for j in range(table.num_options):
        option_key = nonconformity(table, j).key
        count = sum(1 for key in keys if key >= option_key)
        if count >= min_count:
            members.add(j)
    return PredictionSet(item_id=table.item_id, members=frozenset(members))


def indicator_empirical_loss(
    cal_scores: Sequence[NonconformityScore],
) -> Callable[[float], float]:
    """Empirical miscoverage t -> #{scores > t} / n for the given scores.

    Works in the float domain so that evaluating at a score's own float value
    counts that score as covered; exact-rank evaluation happens inside
    :func:`calibrate_risk` when no explicit evaluator is supplied.
    """
    values = sorted(s.value for s in cal_scores)
    n = len(values)

    def loss(t: float) -> float:
        return (n - bisect_right(values, t)) / n

    return loss


def calibrate_risk(
    cal_scores: Iterable[NonconformityScore],
    alpha: float,
    empirical_loss: Callable[[float], float] | None = None,
) -> CalibrationResult:
    """Smallest candidate threshold t with empirical loss <= (alpha(n+1)-1)/n.

    Candidates are the distinct calibration score values plus {0, 1}. The
    loss must be non-increasing in t and is a step function changing only at
    score values, so scanning candidates is exact, not approximate.  The
    default loss is the miscoverage indicator built from ``cal_scores``; it
    is evaluated by integer count rather than through floats.

    When alpha(n+1) < 1 the bound is negative and unreachable; the threshold
    falls back to 1 (which keeps every option, since scores live in [0, 1])
    and the result carries ``warning=True``.
    """
    _check_level(alpha)
    scores = _sorted_scores(cal_scores)
    n = len(scores)
    keys = [s.key for s in scores]
    bound = (exact_level(alpha) * (n + 1) - 1) / n  # exact rational

    # Candidate thresholds, ascending, deduplicated: {0} U score values U {1}.
    candidates: list[tuple[Fraction | float, float]] = [(Fraction(0), 0.0)]
    for score in scores:
        if score.key != candidates[-1][0]:
            candidates.append((score.key, score.value))
    if candidates[-1][0] != 1:
        candidates.append((Fraction(1), 1.0))

    for key, value in candidates:
        if empirical_loss is None:
            loss = Fraction(n - bisect_right(keys, key), n)
        else:
            loss = empirical_loss(value)
        if loss <= bound:
            return CalibrationResult(
                method=CalibrationMethod.RISK_CONTROL,
                alpha=float(alpha),
                threshold=value,
                n_cal=n,
                cal_scores=tuple(scores),
            )

    return CalibrationResult(
        method=CalibrationMethod.RISK_CONTROL,
        alpha=float(alpha),
        threshold=1.0,
        n_cal=n,
        cal_scores=tuple(scores),
        warning=True,
    )


def calibrate(
    cal_scores: Iterable[NonconformityScore],
    alpha: float,
    method: "CalibrationMethod | str",
) -> CalibrationResult:
    """Run the named calibration procedure.

    For the p-value method calibration just retains the sorted scores; the
    per-option p-values are computed at prediction time.
    """
    method = CalibrationMethod(method)
    if method is CalibrationMethod.QUANTILE:
        return calibrate_quantile(cal_scores, alpha)
    if method is CalibrationMethod.RISK_CONTROL:
        return calibrate_risk(cal_scores, alpha)
    _check_level(alpha)
    scores = _sorted_scores(cal_scores)
    return CalibrationResult(
        method=CalibrationMethod.PVALUE,
        alpha=float(alpha),
        threshold=None,
        n_cal=len(scores),
        cal_scores=tuple(scores),
    )


def predict_set(calibration: CalibrationResult, table: FrequencyTable) -> PredictionSet:
    """Prediction set for one item under an existing calibration."""
    if calibration.method is CalibrationMethod.PVALUE:
        return predict_set_pvalue(calibration.cal_scores, table, calibration.alpha)
    assert calibration.threshold is not None
    return predict_set_threshold(table, calibration.threshold)

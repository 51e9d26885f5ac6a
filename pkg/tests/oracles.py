"""Independent brute-force oracles the fast implementations are checked against."""

from __future__ import annotations

from decimal import Decimal
from fractions import Fraction
from typing import Sequence


def auroc_bruteforce(confidences: Sequence[float], correct: Sequence[bool]) -> float:
    """O(n^2) cross-pair count: wins + half-ties over all (correct, incorrect) pairs."""
    positives = [c for c, ok in zip(confidences, correct) if ok]
    negatives = [c for c, ok in zip(confidences, correct) if not ok]
    assert positives and negatives
    total = 0.0
    for p in positives:
        for q in negatives:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(positives) * len(negatives))


def pvalue_members_bruteforce(
    cal_values: Sequence[Fraction], option_values: Sequence[Fraction], epsilon: float
) -> set[int]:
    """Direct count-and-compare per option, all in exact rational arithmetic."""
    n = len(cal_values)
    eps = Fraction(Decimal(str(float(epsilon))))
    members = set()
    for j, value in enumerate(option_values):
        count = sum(1 for s in cal_values if s >= value)
        if Fraction(count, n + 1) > eps:
            members.add(j)
    return members


def emr_bruteforce(member_sets: Sequence[set[int]], truths: Sequence[int]) -> float:
    misses = sum(1 for members, truth in zip(member_sets, truths) if truth not in members)
    return misses / len(member_sets)

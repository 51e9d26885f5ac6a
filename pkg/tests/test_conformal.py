"""Calibration procedures, prediction sets, and their guarantees."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqcp.conformal import (
    FULL_SET_THRESHOLD,
    CalibrationMethod,
    NonconformityScore,
    calibrate,
    calibrate_quantile,
    calibrate_risk,
    indicator_empirical_loss,
    nonconformity,
    predict_set,
    predict_set_pvalue,
    predict_set_threshold,
    pvalue,
)
from freqcp.mcqa import FrequencyTable, point_prediction

from oracles import pvalue_members_bruteforce


def score_grid(values, m=10):
    """Exact scores value = v/m for integer v."""
    return [NonconformityScore(v / m, (v, m)) for v in values]


NINE_SCORES = score_grid(range(1, 10))  # 0.1 .. 0.9


class TestNonconformity:
    def test_value_and_exact(self):
        table = FrequencyTable.from_counts("q", (10, 5, 3, 2), 20)
        score = nonconformity(table, 0)
        assert score.value == 0.5
        assert score.exact == (10, 20)

    def test_fully_confident(self):
        table = FrequencyTable.from_counts("q", (20, 0, 0, 0), 20)
        assert nonconformity(table, 0).value == 0.0

    def test_hand_computed(self):
        # 1 - 2/20 = 18/20
        table = FrequencyTable.from_counts("q", (10, 5, 3, 2), 20)
        score = nonconformity(table, 3)
        assert score.exact == (18, 20)
        assert score.value == 18 / 20 == 0.9

    def test_logit_mode_has_no_exact(self):
        table = FrequencyTable.from_probs("q", (0.7, 0.2, 0.1))
        score = nonconformity(table, 1)
        assert score.exact is None
        assert score.value == pytest.approx(0.8)

    def test_option_out_of_range(self):
        table = FrequencyTable.from_probs("q", (0.5, 0.5))
        with pytest.raises(ValueError):
            nonconformity(table, 2)


class TestCalibrateQuantile:
    def test_nine_scores_alpha_point_one(self):
        # k = ceil(10 * 0.9) = 9 -> the 9th smallest
        result = calibrate_quantile(NINE_SCORES, 0.1)
        assert result.threshold == 0.9
        assert result.n_cal == 9

    def test_infeasible_rank_gives_full_sets(self):
        result = calibrate_quantile(NINE_SCORES, 0.05)
        assert result.threshold == FULL_SET_THRESHOLD

    def test_single_point(self):
        result = calibrate_quantile([NonconformityScore(0.4)], 0.5)
        assert result.threshold == 0.4

    def test_decimal_reading_of_alpha(self):
        # ceil(10 * (1 - 0.3)) must be 7, not 8 via the binary value of 0.3
        result = calibrate_quantile(NINE_SCORES, 0.3)
        assert result.threshold == 0.7

    def test_cal_scores_retained_sorted(self):
        shuffled = list(reversed(NINE_SCORES))
        result = calibrate_quantile(shuffled, 0.5)
        values = [s.value for s in result.cal_scores]
        assert values == sorted(values)
        assert len(result.cal_scores) == result.n_cal

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            calibrate_quantile([], 0.1)

    def test_bad_alpha_rejected(self):
        with pytest.raises(ValueError):
            calibrate_quantile(NINE_SCORES, 1.0)


class TestPredictSetThreshold:
    table = FrequencyTable.from_counts("q", (10, 5, 3, 2), 20)

    def test_tight_threshold(self):
        assert predict_set_threshold(self.table, 0.5).members == {0}

    def test_loose_threshold_inclusive(self):
        # scores are (0.5, 0.75, 0.85, 0.9); all <= 0.9 inclusively
        assert predict_set_threshold(self.table, 0.9).members == {0, 1, 2, 3}

    def test_empty_set_allowed(self):
        result = predict_set_threshold(self.table, 0.3)
        assert result.members == frozenset()
        assert result.size == 0

    def test_full_set_sentinel(self):
        assert predict_set_threshold(self.table, FULL_SET_THRESHOLD).members == {0, 1, 2, 3}


class TestPvalue:
    cal = score_grid([2, 5, 8])  # 0.2, 0.5, 0.8

    def test_counting_definition(self):
        # two of three calibration scores are >= 0.5
        assert pvalue(self.cal, NonconformityScore(0.5, (5, 10))) == 2 / 4

    def test_strict_dominance_gives_zero(self):
        assert pvalue(self.cal, NonconformityScore(0.9, (9, 10))) == 0.0

    def test_tie_with_max(self):
        assert pvalue(self.cal, NonconformityScore(0.8, (8, 10))) == 1 / 4

    def test_zero_score_dominates(self):
        assert pvalue(self.cal, NonconformityScore(0.0, (0, 10))) == 3 / 4


class TestPredictSetPvalue:
    cal = [NonconformityScore(v) for v in (0.2, 0.5, 0.8)]
    table = FrequencyTable.from_counts("q", (10, 5, 3, 2), 20)

    def test_worked_example_against_bruteforce(self):
        result = predict_set_pvalue(self.cal, self.table, 0.3)
        expected = pvalue_members_bruteforce(
            [Fraction(v).limit_denominator(10) for v in (0.2, 0.5, 0.8)],
            [Fraction(20 - c, 20) for c in (10, 5, 3, 2)],
            0.3,
        )
        assert result.members == expected == {0}

    def test_large_epsilon_empties_the_set(self):
        # epsilon >= n/(n+1): no count can exceed it
        result = predict_set_pvalue(self.cal, self.table, 0.75)
        assert result.members == frozenset()

    def test_small_epsilon_keeps_any_matched_option(self):
        # epsilon below 1/(n+1): one inclusive match suffices
        result = predict_set_pvalue(self.cal, self.table, 0.2)
        # counts >= each option score: (2, 1, 0, 0); need count >= 1
        assert result.members == {0, 1}

    def test_random_instances_against_bruteforce(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(1, 30))
            m = 20
            cal_counts = rng.integers(0, m + 1, size=n)
            cal = [NonconformityScore(int(v) / m, (int(v), m)) for v in cal_counts]
            counts = rng.multinomial(m, [0.25] * 4)
            table = FrequencyTable.from_counts("q", counts, m)
            epsilon = float(rng.uniform(0.01, 0.99))
            result = predict_set_pvalue(cal, table, epsilon)
            expected = pvalue_members_bruteforce(
                [Fraction(int(v), m) for v in cal_counts],
                [Fraction(m - int(c), m) for c in counts],
                epsilon,
            )
            assert result.members == expected


class TestCalibrateRisk:
    def test_alpha_point_one_covers_everything(self):
        # bound = (0.1*10 - 1)/9 = 0 -> no calibration miss allowed
        result = calibrate_risk(NINE_SCORES, 0.1)
        assert result.threshold == 0.9
        assert not result.warning

    def test_alpha_point_five(self):
        # bound = 4/9 -> at most 4 of 9 scores may exceed the threshold
        result = calibrate_risk(NINE_SCORES, 0.5)
        assert result.threshold == 0.5

    def test_infeasible_bound_warns(self):
        result = calibrate_risk([NonconformityScore(0.4)], 0.4)
        assert result.threshold == 1.0
        assert result.warning

    def test_enumerated_oracle(self):
        # independent enumeration of L_n over every candidate, in exact arithmetic
        score_fracs = [Fraction(v, 10) for v in range(1, 10)]
        for alpha in (0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9):
            bound = (Fraction(str(alpha)) * 10 - 1) / 9
            candidates = [Fraction(0)] + score_fracs + [Fraction(1)]
            losses = {t: Fraction(sum(1 for s in score_fracs if s > t), 9) for t in candidates}
            expected = float(min(t for t in candidates if losses[t] <= bound))
            assert calibrate_risk(NINE_SCORES, alpha).threshold == expected

    def test_custom_loss_matches_default_path(self):
        scores = NINE_SCORES
        for alpha in (0.2, 0.3, 0.5, 0.7):
            default = calibrate_risk(scores, alpha)
            custom = calibrate_risk(
                scores, alpha, empirical_loss=indicator_empirical_loss(scores)
            )
            assert custom.threshold == default.threshold


class TestCalibrateDispatch:
    def test_pvalue_keeps_scores_without_threshold(self):
        result = calibrate(NINE_SCORES, 0.2, "pvalue")
        assert result.method is CalibrationMethod.PVALUE
        assert result.threshold is None
        assert len(result.cal_scores) == 9

    def test_json_round_trip_schema(self):
        result = calibrate(NINE_SCORES, 0.2, CalibrationMethod.QUANTILE)
        payload = result.to_json_dict()
        assert set(payload) == {"method", "alpha", "threshold", "n_cal", "warning"}
        assert payload["method"] == "quantile"

    def test_json_infinite_threshold(self):
        result = calibrate_quantile(NINE_SCORES, 0.05)
        assert result.to_json_dict()["threshold"] == "inf"

    def test_predict_set_dispatch(self):
        table = FrequencyTable.from_counts("q", (10, 5, 3, 2), 20)
        for method in CalibrationMethod:
            result = calibrate(NINE_SCORES, 0.3, method)
            members = predict_set(result, table).members
            assert members <= {0, 1, 2, 3}


class TestQuantileRiskEquivalence:
    def test_random_instances_exact(self):
        rng = np.random.default_rng(20240817)
        tables = [
            FrequencyTable.from_counts("t", rng.multinomial(20, [0.25] * 4), 20)
            for _ in range(5)
        ]
        for _ in range(200):
            n = int(rng.integers(1, 51))
            counts = rng.integers(0, 21, size=n)
            scores = [NonconformityScore(int(v) / 20, (int(v), 20)) for v in counts]
            alpha = float(rng.uniform(0.05, 0.95))
            quantile = calibrate_quantile(scores, alpha)
            risk = calibrate_risk(scores, alpha)
            for table in tables:
                set_q = predict_set_threshold(table, quantile.threshold)
                set_r = predict_set_threshold(table, risk.threshold)
                assert set_q.members == set_r.members


finite_scores = st.lists(
    st.integers(min_value=0, max_value=20).map(
        lambda v: NonconformityScore(v / 20, (v, 20))
    ),
    min_size=1,
    max_size=40,
)


@given(
    counts=st.lists(st.integers(0, 20), min_size=2, max_size=8).filter(
        lambda cs: sum(cs) <= 20
    ),
    lo=st.floats(min_value=0.0, max_value=1.0),
    hi=st.floats(min_value=0.0, max_value=1.0),
)
def test_threshold_sets_are_nested(counts, lo, hi):
    table = FrequencyTable.from_counts("q", counts, 20)
    t_small, t_big = sorted((lo, hi))
    small = predict_set_threshold(table, t_small).members
    big = predict_set_threshold(table, t_big).members
    assert small <= big


@given(
    scores=finite_scores,
    a1=st.floats(min_value=0.01, max_value=0.99),
    a2=st.floats(min_value=0.01, max_value=0.99),
)
def test_quantile_threshold_monotone_in_alpha(scores, a1, a2):
    lo, hi = sorted((a1, a2))
    thr_lo = calibrate_quantile(scores, lo).threshold
    thr_hi = calibrate_quantile(scores, hi).threshold
    assert thr_lo >= thr_hi


@given(
    counts=st.lists(st.integers(0, 20), min_size=2, max_size=8).filter(
        lambda cs: sum(cs) <= 20
    ),
    scores=finite_scores,
    alpha=st.floats(min_value=0.01, max_value=0.99),
)
def test_nonempty_sets_contain_the_argmax(counts, scores, alpha):
    table = FrequencyTable.from_counts("q", counts, 20)
    best = point_prediction(table)
    for method in CalibrationMethod:
        members = predict_set(calibrate(scores, alpha, method), table).members
        if members:
            assert best in members


def test_marginal_coverage_monte_carlo_light():
    """Exchangeable draws: coverage over resplits stays above 1 - alpha."""
    rng = np.random.default_rng(3)
    m, n = 20, 60
    alpha = 0.2
    hits = []
    for _ in range(200):
        probs = rng.dirichlet([0.8] * 4, size=2 * n)
        truths = np.array([rng.choice(4, p=p) for p in probs])
        counts = np.array([rng.multinomial(m, p) for p in probs])
        scores = m - counts[np.arange(2 * n), truths]
        cal, test = scores[:n], scores[n:]
        k = math.ceil((n + 1) * (1 - alpha))
        threshold = np.sort(cal)[k - 1]
        hits.append((test <= threshold).mean())
    assert np.mean(hits) >= 1 - alpha - 0.02

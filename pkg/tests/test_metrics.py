"""Correlation/error metrics against brute-force oracles and scipy."""

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from iqfusion.errors import ShapeError, UndefinedCorrelationError
from iqfusion.metrics import EvalReport, average_ranks, evaluate_pairs, krcc, plcc, rmse, srcc

import oracles


def random_pairs(rng, n, with_ties=False):
    if with_ties:
        pred = rng.integers(0, max(2, n // 3), size=n).astype(float)
        truth = rng.integers(0, max(2, n // 3), size=n).astype(float)
        if np.all(pred == pred[0]):
            pred[0] += 1.0
        if np.all(truth == truth[0]):
            truth[0] += 1.0
        return pred, truth
    return rng.standard_normal(n), rng.standard_normal(n)


class TestSrcc:
    def test_identity_is_one(self):
        x = np.array([3.0, 1.0, 4.0, 1.5, 9.0])
        assert srcc(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_reversed_is_minus_one(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        assert srcc(x, x[::-1].copy()) == pytest.approx(-1.0, abs=1e-12)

    def test_classic_rank_formula(self):
        # d^2 sums to 2 over n=5: 1 - 6*2/(5*24) = 0.9
        assert srcc([1, 2, 3, 5, 4], [1, 2, 3, 4, 5]) == pytest.approx(0.9, abs=1e-12)

    def test_constant_input_raises(self):
        with pytest.raises(UndefinedCorrelationError):
            srcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(UndefinedCorrelationError):
            srcc([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])

    def test_equals_pearson_on_ranks(self, rng):
        for _ in range(50):
            pred, truth = random_pairs(rng, 30, with_ties=True)
            expected = plcc(average_ranks(pred), average_ranks(truth))
            assert srcc(pred, truth) == pytest.approx(expected, abs=1e-12)


class TestPlcc:
    def test_positive_affine_is_one(self, rng):
        pred = rng.standard_normal(40)
        assert plcc(pred, 2.0 * pred + 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_negation_is_minus_one(self, rng):
        pred = rng.standard_normal(40)
        assert plcc(pred, -pred) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_covariance_loop_oracle(self, rng):
        pred, truth = random_pairs(rng, 100)
        expected = oracles.pearson(pred.tolist(), truth.tolist())
        assert plcc(pred, truth) == pytest.approx(expected, abs=1e-12)


class TestKrcc:
    def test_identical_ordering_no_ties(self, rng):
        pred = rng.permutation(20).astype(float)
        assert krcc(pred, pred * 3.0 + 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_hand_counted_example(self):
        # pairs: (1,2),(1,3),(2,3) -> concordant 2, discordant 1, tau = 1/3
        assert krcc([1, 2, 3], [1, 3, 2]) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_matches_pair_counting_oracle_with_ties(self, rng):
        for _ in range(50):
            pred, truth = random_pairs(rng, 50, with_ties=True)
            expected = oracles.kendall_tau_b(pred.tolist(), truth.tolist())
            assert krcc(pred, truth) == pytest.approx(expected, abs=1e-12)

    def test_all_tied_axis_raises(self):
        with pytest.raises(UndefinedCorrelationError):
            krcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


class TestRmse:
    def test_zero_iff_equal(self, rng):
        x = rng.standard_normal(10)
        assert rmse(x, x.copy()) == 0.0
        assert rmse(x, x + 0.1) > 0.0

    def test_hand_arithmetic(self):
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5), abs=1e-12)

    def test_matches_loop_oracle(self, rng):
        pred, truth = random_pairs(rng, 64)
        assert rmse(pred, truth) == pytest.approx(
            oracles.rmse_loop(pred.tolist(), truth.tolist()), abs=1e-12
        )


def test_validation_errors():
    with pytest.raises(ShapeError):
        srcc([1.0], [1.0])
    with pytest.raises(ShapeError):
        plcc([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ShapeError):
        rmse([np.nan, 1.0], [0.0, 0.0])


def test_matches_scipy_on_random_inputs(rng):
    for _ in range(30):
        pred, truth = random_pairs(rng, 40, with_ties=bool(rng.integers(2)))
        assert srcc(pred, truth) == pytest.approx(
            scipy.stats.spearmanr(pred, truth).statistic, abs=1e-10
        )
        assert plcc(pred, truth) == pytest.approx(
            scipy.stats.pearsonr(pred, truth).statistic, abs=1e-10
        )
        assert krcc(pred, truth) == pytest.approx(
            scipy.stats.kendalltau(pred, truth).statistic, abs=1e-10
        )


# Unique integers keep every strictly-monotone transform below strictly
# monotone in float64 as well (no spacing-induced ties).
grid_values = st.integers(min_value=-(10**6), max_value=10**6)


@st.composite
def distinct_vectors(draw, min_size=3, max_size=25):
    xs = draw(st.lists(grid_values, min_size=min_size, max_size=max_size, unique=True))
    ys = draw(st.lists(grid_values, min_size=len(xs), max_size=len(xs), unique=True))
    return np.array(xs, dtype=float), np.array(ys, dtype=float)


class TestInvariances:
    @given(distinct_vectors())
    @settings(max_examples=50, deadline=None)
    def test_rank_metrics_invariant_under_monotone_transform(self, pair):
        pred, truth = pair
        stretched = np.exp(pred / 1e6) * 3.0 + 7.0  # strictly increasing
        assert srcc(stretched, truth) == pytest.approx(srcc(pred, truth), abs=1e-9)
        assert krcc(stretched, truth) == pytest.approx(krcc(pred, truth), abs=1e-9)

    @given(distinct_vectors())
    @settings(max_examples=50, deadline=None)
    def test_rank_metrics_negate_under_decreasing_transform(self, pair):
        pred, truth = pair
        assert srcc(-pred, truth) == pytest.approx(-srcc(pred, truth), abs=1e-9)
        assert krcc(-pred, truth) == pytest.approx(-krcc(pred, truth), abs=1e-9)

    @given(distinct_vectors())
    @settings(max_examples=50, deadline=None)
    def test_plcc_affine_invariance_and_negation(self, pair):
        pred, truth = pair
        base = plcc(pred, truth)
        assert plcc(0.5 * pred + 11.0, truth) == pytest.approx(base, abs=1e-9)
        assert plcc(-pred, truth) == pytest.approx(-base, abs=1e-9)

    @given(distinct_vectors())
    @settings(max_examples=50, deadline=None)
    def test_symmetry(self, pair):
        pred, truth = pair
        assert srcc(pred, truth) == pytest.approx(srcc(truth, pred), abs=1e-12)
        assert plcc(pred, truth) == pytest.approx(plcc(truth, pred), abs=1e-12)
        assert krcc(pred, truth) == pytest.approx(krcc(truth, pred), abs=1e-12)
        assert rmse(pred, truth) == pytest.approx(rmse(truth, pred), abs=1e-12)


class TestEvalReport:
    def test_bundle_and_ranges(self, rng):
        pred, truth = random_pairs(rng, 50)
        report = evaluate_pairs(pred, truth)
        assert -1.0 <= report.srcc <= 1.0
        assert -1.0 <= report.plcc <= 1.0
        assert -1.0 <= report.krcc <= 1.0
        assert report.rmse >= 0.0
        assert report.n == 50
        assert report.criterion == pytest.approx(report.srcc + report.plcc)

    def test_record_line_field_order(self):
        report = EvalReport(srcc=0.5, plcc=0.25, krcc=0.125, rmse=2.0, n=7)
        assert report.record() == (
            "srcc=0.500000 plcc=0.250000 krcc=0.125000 rmse=2.000000 n=7"
        )

    def test_table_has_arrow_convention(self):
        report = EvalReport(srcc=0.5, plcc=0.25, krcc=0.125, rmse=2.0, n=7)
        table = report.table()
        for token in ("SRCC↑", "PLCC↑", "KRCC↑", "RMSE↓"):
            assert token in table

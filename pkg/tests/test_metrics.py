"""Tests for the agreement statistics, each checked against a brute-force
oracle written in plain python."""

import math

import numpy as np
import pytest

from bpnet.metrics import (
    SubjectPrediction,
    aami_check,
    bhs_grade,
    bland_altman,
    build_report,
    error_histogram,
    error_stats,
    pearson_r,
)


def brute_stats(ref, est):
    errors = [e - r for r, e in zip(ref, est)]
    n = len(errors)
    me = sum(errors) / n
    sde = math.sqrt(sum((e - me) ** 2 for e in errors) / (n - 1)) if n > 1 else 0.0
    rmse = math.sqrt(sum(e * e for e in errors) / n)
    mae = sum(abs(e) for e in errors) / n
    return me, sde, rmse, mae


class TestErrorStats:
    def test_identical_series(self):
        stats = error_stats([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert stats.me == stats.sde == stats.rmse == stats.mae == 0.0
        assert stats.n == 3

    def test_hand_arithmetic(self):
        stats = error_stats([1.0, 2.0], [2.0, 4.0])
        assert math.isclose(stats.mae, 1.5, rel_tol=1e-15)
        assert math.isclose(stats.rmse, math.sqrt(2.5), rel_tol=1e-15)
        assert math.isclose(stats.me, 1.5, rel_tol=1e-15)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(2, 50)
            ref = rng.normal(size=n)
            est = rng.normal(size=n)
            stats = error_stats(ref, est)
            me, sde, rmse, mae = brute_stats(ref, est)
            assert math.isclose(stats.me, me, rel_tol=1e-12, abs_tol=1e-12)
            assert math.isclose(stats.sde, sde, rel_tol=1e-12, abs_tol=1e-12)
            assert math.isclose(stats.rmse, rmse, rel_tol=1e-12, abs_tol=1e-12)
            assert math.isclose(stats.mae, mae, rel_tol=1e-12, abs_tol=1e-12)
            assert stats.mae <= stats.rmse + 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            error_stats([1.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            error_stats([], [])


class TestAami:
    def test_pass(self):
        stats = error_stats(np.zeros(10), np.full(10, 0.0))
        result = aami_check(stats, 104)
        assert result.passed and result.failures == []

    def test_mean_error_failure_cited(self):
        stats = error_stats(np.zeros(100), np.full(100, 6.0))
        result = aami_check(stats, 104)
        assert not result.passed
        assert any("mean error" in reason for reason in result.failures)

    def test_population_failure_cited(self):
        stats = error_stats(np.zeros(100), np.random.default_rng(0).normal(0, 1, 100))
        result = aami_check(stats, 50)
        assert not result.passed
        assert any("population" in reason for reason in result.failures)

    def test_sde_failure_cited(self):
        rng = np.random.default_rng(1)
        stats = error_stats(np.zeros(500), rng.normal(0, 12.0, 500))
        result = aami_check(stats, 104)
        assert not result.passed
        assert any("standard deviation" in reason for reason in result.failures)


class TestBhs:
    def test_all_zero_errors(self):
        result = bhs_grade(np.zeros(10))
        assert (result.pct_within_5, result.pct_within_10, result.pct_within_15) == (100, 100, 100)
        assert result.grade == "A"

    def test_all_large_errors(self):
        result = bhs_grade(np.full(10, 20.0))
        assert (result.pct_within_5, result.pct_within_10, result.pct_within_15) == (0, 0, 0)
        assert result.grade == "D"

    def test_constructed_94_percent(self):
        errors = np.concatenate([np.full(94, 1.0), np.full(6, 7.0)])
        result = bhs_grade(errors)
        assert result.pct_within_5 == 94.0
        assert result.grade == "A"

    def test_grade_b_boundary(self):
        errors = np.concatenate([np.full(50, 4.0), np.full(25, 9.0), np.full(15, 14.0),
                                 np.full(10, 30.0)])
        result = bhs_grade(errors)
        assert (result.pct_within_5, result.pct_within_10, result.pct_within_15) == (50, 75, 90)
        assert result.grade == "B"

    def test_percentages_monotone(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            result = bhs_grade(rng.normal(0, 8, size=200))
            assert result.pct_within_5 <= result.pct_within_10 <= result.pct_within_15

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        errors = rng.normal(0, 6, size=500)
        result = bhs_grade(errors)
        for pct, threshold in zip(
            (result.pct_within_5, result.pct_within_10, result.pct_within_15), (5, 10, 15)
        ):
            brute = 100.0 * sum(1 for e in errors if abs(e) <= threshold) / len(errors)
            assert math.isclose(pct, brute, rel_tol=1e-12)


class TestBlandAltman:
    def test_identical(self):
        result = bland_altman([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert result.mean_diff == result.loa_low == result.loa_high == 0.0

    def test_two_point_example(self):
        result = bland_altman([0.0, 0.0], [-1.0, 1.0])
        assert result.mean_diff == 0.0
        assert math.isclose(result.sd_diff, math.sqrt(2), rel_tol=1e-15)
        assert math.isclose(result.loa_low, -1.96 * math.sqrt(2), rel_tol=1e-12)
        assert math.isclose(result.loa_high, 1.96 * math.sqrt(2), rel_tol=1e-12)
        assert abs(result.loa_high - 2.7719) < 1e-4

    def test_loa_width_identity(self):
        rng = np.random.default_rng(4)
        ref = rng.normal(100, 10, 300)
        est = ref + rng.normal(0, 3.77, 300)
        result = bland_altman(ref, est)
        assert math.isclose(
            result.loa_high - result.loa_low, 2 * 1.96 * result.sd_diff, rel_tol=1e-12
        )
        assert result.means.shape == result.diffs.shape == ref.shape

    def test_engineered_sd_reproduces_loa_shape(self):
        # a prediction set with diff sd ~3.77 gives limits spanning ~ +-7.4
        rng = np.random.default_rng(5)
        ref = rng.normal(120, 12, 5000)
        est = ref + rng.normal(0.25, 3.77, 5000)
        result = bland_altman(ref, est)
        assert 6.5 < result.loa_high < 8.5
        assert -8.0 < result.loa_low < -6.0


class TestPearson:
    def test_perfect_correlation(self):
        assert math.isclose(pearson_r([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 1.0, rel_tol=1e-15)

    def test_perfect_anticorrelation(self):
        assert math.isclose(pearson_r([1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]), -1.0, rel_tol=1e-15)

    def test_hand_value(self):
        assert math.isclose(pearson_r([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]), 0.9819805060619659,
                            rel_tol=1e-12)

    def test_constant_series_rejected(self):
        with pytest.raises(ValueError, match="undefined correlation"):
            pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_affine_invariance(self):
        rng = np.random.default_rng(6)
        ref = rng.normal(size=100)
        est = rng.normal(size=100)
        base = pearson_r(ref, est)
        assert math.isclose(pearson_r(2.5 * ref + 7, est), base, rel_tol=1e-12)
        assert math.isclose(pearson_r(ref, 0.3 * est - 11), base, rel_tol=1e-12)


class TestErrorHistogram:
    def test_single_value(self):
        edges, counts = error_histogram(np.array([3.2]), bin_width=0.5)
        assert counts.tolist() == [1]
        assert len(edges) == 2

    def test_symmetric_errors(self):
        edges, counts = error_histogram(np.array([-4.0, 4.0, -4.0, 4.0, 0.0]), bin_width=1.0)
        assert counts.tolist() == counts[::-1].tolist()
        assert counts.sum() == 5

    def test_counts_conserved_and_mean_recovered(self):
        rng = np.random.default_rng(7)
        errors = rng.normal(0, 1, 10_000)
        edges, counts = error_histogram(errors, bin_width=0.5)
        assert counts.sum() == errors.size
        centers = (edges[:-1] + edges[1:]) / 2
        assert abs(np.average(centers, weights=counts)) < 0.05


class TestBuildReport:
    def make_prediction(self, seed, subject_id, noise=2.0, offset=0.0):
        rng = np.random.default_rng(seed)
        sbp = rng.normal(120, 8, 400)
        dbp = rng.normal(78, 6, 400)
        return SubjectPrediction(
            subject_id=subject_id,
            sbp_ref=sbp,
            sbp_est=sbp + rng.normal(offset, noise, 400),
            dbp_ref=dbp,
            dbp_est=dbp + rng.normal(offset, noise, 400),
        )

    def test_single_subject_averaged_equals_combined(self):
        report = build_report([self.make_prediction(0, "a")])
        for channel in ("sbp", "dbp"):
            assert math.isclose(
                report.averaged[channel]["rmse"], report.combined[channel].rmse, rel_tol=1e-12
            )
            assert math.isclose(
                report.averaged[channel]["mae"], report.combined[channel].mae, rel_tol=1e-12
            )

    def test_two_subject_aggregations_differ_and_match_hand_math(self):
        a = self.make_prediction(1, "a", noise=1.0)
        b = self.make_prediction(2, "b", noise=6.0)
        report = build_report([a, b])
        rmse_a = error_stats(a.sbp_ref, a.sbp_est).rmse
        rmse_b = error_stats(b.sbp_ref, b.sbp_est).rmse
        assert math.isclose(report.averaged["sbp"]["rmse"], (rmse_a + rmse_b) / 2, rel_tol=1e-12)
        stacked_ref = np.concatenate([a.sbp_ref, b.sbp_ref])
        stacked_est = np.concatenate([a.sbp_est, b.sbp_est])
        assert math.isclose(
            report.combined["sbp"].rmse, error_stats(stacked_ref, stacked_est).rmse, rel_tol=1e-12
        )
        assert not math.isclose(
            report.averaged["sbp"]["rmse"], report.combined["sbp"].rmse, rel_tol=1e-6
        )

    def test_identical_distributions_agree(self):
        a = self.make_prediction(3, "a")
        b = SubjectPrediction("b", a.sbp_ref.copy(), a.sbp_est.copy(), a.dbp_ref.copy(),
                              a.dbp_est.copy())
        report = build_report([a, b])
        assert math.isclose(
            report.averaged["sbp"]["rmse"], report.combined["sbp"].rmse, rel_tol=1e-12
        )

    def test_combined_n_sums_subjects(self):
        report = build_report([self.make_prediction(4, "a"), self.make_prediction(5, "b")])
        assert report.combined["sbp"].n == sum(
            entry["sbp"].n for entry in report.per_subject.values()
        )

    def test_serialization_round_trip(self):
        import json

        report = build_report([self.make_prediction(6, "a"), self.make_prediction(7, "b")])
        payload = json.loads(json.dumps(report.to_dict()))
        assert payload["combined"]["sbp"]["rmse"] == report.combined["sbp"].rmse
        assert payload["bhs"]["dbp"]["grade"] == report.bhs["dbp"].grade
        assert payload["histograms"]["sbp"]["counts"] == list(
            map(int, report.histograms["sbp"][1])
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no subjects"):
            build_report([])

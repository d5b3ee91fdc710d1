import json
import math

import numpy as np
import pytest

from rlcmtr.dataset import Dataset, make_kfold
from rlcmtr.evaluation import (DegenerateTargetError, arrmse, boxplot_rows_csv,
                               correlation_matrix_csv, correlation_summary, evaluate_cv,
                               evaluate_holdout, evaluate_plan, evaluate_prefixes,
                               pairwise_target_correlations, per_target_rrmse, rrmse)
from rlcmtr.gbtree import GbmConfig
from rlcmtr.rlc import RlcMethod, RlcParams, StMethod


class MeanModel:
    def __init__(self, means):
        self.means = means

    def predict(self, X):
        return np.tile(self.means, (len(X), 1))


class MeanMethod:
    name = "mean"

    def train(self, data):
        return MeanModel(data.Y.mean(axis=0))


class PerfectMethod:
    """Knows the generating function exactly."""
    name = "perfect"

    def train(self, data):
        class M:
            def predict(self, X):
                return np.column_stack([X[:, 0], 2 * X[:, 0]])
        return M()


def linear_data(m=100, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, 2))
    return Dataset(X, np.column_stack([X[:, 0], 2 * X[:, 0]]), ("a", "b"), ("y1", "y2"))


class TestRrmse:
    def test_perfect(self):
        assert rrmse([1, 2, 3], [1, 2, 3], 0.0) == 0

    def test_mean_predictor(self):
        assert rrmse([5, 5, 5], [1, 2, 9], 5.0) == pytest.approx(1.0)

    def test_worked_value(self):
        assert rrmse([0, 1], [0, 2], 1.0) == pytest.approx(math.sqrt(0.5))

    def test_degenerate(self):
        with pytest.raises(DegenerateTargetError) as exc:
            per_target_rrmse([[1, 1], [2, 1]], [[1, 3], [2, 3]], [0.0, 3.0])
        assert exc.value.target == 1

    def test_skip_policy(self):
        with pytest.warns(RuntimeWarning):
            scores = per_target_rrmse([[1, 1], [2, 1]], [[1, 3], [2, 3]], [0.0, 3.0], policy="skip")
        assert scores[0] == 0 and np.isnan(scores[1])
        with pytest.warns(RuntimeWarning):
            assert arrmse([[1, 1], [2, 1]], [[1, 3], [2, 3]], [0.0, 3.0], policy="skip") == 0

    def test_affine_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = rng.integers(2, 20)
            pred, actual = rng.normal(size=n), rng.normal(size=n)
            mean = rng.normal()
            a = rng.choice([-1, 1]) * rng.uniform(0.1, 10)
            b = rng.normal(scale=10)
            assert rrmse(a * pred + b, a * actual + b, a * mean + b) == pytest.approx(
                rrmse(pred, actual, mean), rel=1e-12)


class TestArrmse:
    def test_perfect(self):
        Y = np.random.default_rng(1).normal(size=(10, 3))
        assert arrmse(Y, Y, np.zeros(3)) == 0

    def test_train_means(self):
        Y = np.random.default_rng(2).normal(size=(10, 3))
        means = Y.mean(axis=0)
        assert arrmse(np.tile(means, (10, 1)), Y, means) == pytest.approx(1.0, abs=1e-15)

    def test_mean_of_targets(self):
        actual = np.array([[0.0, 0.0], [2.0, 2.0]])
        pred = np.array([[0.0, 1.0], [2.0, 1.0]])
        assert arrmse(pred, actual, [1.0, 1.0]) == pytest.approx(0.5)

    def test_shape_check(self):
        with pytest.raises(ValueError):
            arrmse(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros(2))


class TestProtocols:
    def test_holdout_mean_predictor_exactly_one(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(20, 2))
        Y = rng.normal(size=(20, 2))
        train = Dataset(X[:10], Y[:10], ("a", "b"), ("u", "v"))
        test_Y = Y[10:] - Y[10:].mean(0) + Y[:10].mean(0)
        test = Dataset(X[10:], test_Y, ("a", "b"), ("u", "v"))
        report = evaluate_holdout(MeanMethod(), train, test)
        assert report.arrmse == pytest.approx(1.0, abs=1e-12)
        assert report.protocol == {"type": "holdout", "train": 10, "test": 10}
        np.testing.assert_allclose(report.train_means, Y[:10].mean(0))

    def test_st_zero_iterations_holdout(self):
        data = linear_data()
        train, test = data.subset(np.arange(50)), data.subset(np.arange(50, 100))
        report = evaluate_holdout(StMethod(GbmConfig(iterations=0)), train, test)
        assert 0.9 < report.arrmse < 1.1

    def test_perfect_model(self):
        data = linear_data()
        report = evaluate_cv(PerfectMethod(), data, folds=5, seed=0)
        assert report.arrmse == 0
        assert len(report.fold_arrmse) == 5

    def test_cv_aggregation(self):
        data = linear_data(m=150)
        report = evaluate_cv(MeanMethod(), data, folds=10, seed=1)
        assert report.arrmse == pytest.approx(np.mean(report.fold_arrmse))
        assert all(abs(v - 1) < 0.15 for v in report.fold_arrmse)
        assert report.fold_train_means.shape == (10, 2)

    def test_cv_deterministic(self):
        data = linear_data(m=60)
        method = StMethod(GbmConfig(iterations=5))
        a = evaluate_cv(method, data, 4, seed=2)
        b = evaluate_cv(method, data, 4, seed=2)
        assert a.arrmse == b.arrmse
        assert a.to_json() == b.to_json()

    def test_leave_one_out_skip(self):
        data = linear_data(m=12)
        # single-row test folds: the lone value almost never equals the train mean
        report = evaluate_cv(MeanMethod(), data, folds=12, seed=0)
        assert len(report.fold_arrmse) == 12

    def test_fold_parallel_matches_serial(self):
        data = linear_data(m=50)
        method = StMethod(GbmConfig(iterations=5))
        plan = make_kfold(50, 5, 0)
        a = evaluate_plan(method, data, plan)
        b = evaluate_plan(method, data, plan, jobs=2)
        assert a.fold_arrmse == b.fold_arrmse

    def test_prefixes_match_separate_runs(self):
        data = linear_data(m=60)
        plan = make_kfold(60, 3, 0)
        gbm = GbmConfig(iterations=5)
        curve = evaluate_prefixes(RlcMethod(RlcParams(8, 2, 1, gbm)), data, plan, [2, 5, 8])
        for r in (2, 5, 8):
            single = evaluate_plan(RlcMethod(RlcParams(r, 2, 1, gbm)), data, plan)
            assert curve[r].arrmse == pytest.approx(single.arrmse, rel=1e-12)

    def test_report_exports(self):
        report = evaluate_cv(MeanMethod(), linear_data(m=30), 3, 0)
        d = json.loads(report.to_json())
        assert d["protocol"] == {"type": "cv", "folds": 3, "seed": 0}
        csv_text = report.to_csv()
        assert csv_text.splitlines()[0] == "dataset,method,target,rrmse"
        assert csv_text.splitlines()[-1].split(",")[2] == "aRRMSE"


class TestCorrelations:
    def test_perfect_positive_and_negative(self):
        y = np.random.default_rng(0).normal(size=50)
        R = pairwise_target_correlations(np.column_stack([y, 2 * y, -y]))
        assert R[0, 1] == pytest.approx(1.0)
        assert R[0, 2] == pytest.approx(-1.0)

    def test_summary_median(self):
        R = np.array([[1, 0.5, -0.5], [0.5, 1, 0.1], [-0.5, 0.1, 1]])
        s = correlation_summary(R)
        assert s.median_abs == 0.5
        assert s.stdev_abs == pytest.approx(np.std([0.5, 0.5, 0.1], ddof=1))

    def test_two_targets_have_no_stdev(self):
        Y = np.random.default_rng(1).normal(size=(20, 2))
        assert correlation_summary(pairwise_target_correlations(Y)).stdev_abs is None

    def test_constant_column(self):
        Y = np.column_stack([np.ones(10), np.arange(10.0)])
        with pytest.warns(RuntimeWarning):
            R = pairwise_target_correlations(Y)
        assert R[0, 1] == 0 and R[0, 0] == 1

    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            Y = rng.normal(size=(rng.integers(3, 40), rng.integers(2, 8)))
            R = pairwise_target_correlations(Y)
            np.testing.assert_array_equal(R, R.T)
            np.testing.assert_array_equal(np.diag(R), 1)
            assert np.all(np.abs(R) <= 1)
            np.testing.assert_allclose(R, np.corrcoef(Y.T), atol=1e-12)

    def test_single_target(self):
        with pytest.raises(ValueError):
            pairwise_target_correlations(np.zeros((5, 1)))

    def test_csv_outputs(self):
        R = np.array([[1, 0.25], [0.25, 1]])
        assert correlation_matrix_csv(R, ["a", "b"]).splitlines()[1] == "a,1.0,0.25"
        assert boxplot_rows_csv([("d", R)]) == "d,0.25\n"

import numpy as np
import pytest

from confanom.core import (CalibrationTooLarge, DataMatrix,
                           DimensionMismatch, InvalidHyperparameter,
                           KOutOfRange, make_rng)
from confanom.detectors import ScorerSpec, wrap_detached
from confanom.resampling import StrategySpec, aggregate_test_scores
from confanom.resampling import calibrate_bootstrap, calibrate_cv
from confanom.resampling import calibrate_detached, calibrate_jackknife
from confanom.resampling import calibrate_split, cross_validation, jackknife
from confanom.resampling import jackknife_bootstrap, paired_rank_counts, split
from confanom.resampling import test_score_matrix as score_matrix

from conftest import gaussian_matrix

KNN = ScorerSpec(kind="knn_distance", k=3)


class TestStrategySpec:
    def test_split_requires_n_calib(self):
        with pytest.raises(InvalidHyperparameter):
            StrategySpec(kind="split")

    def test_split_rejects_foreign_params(self):
        with pytest.raises(InvalidHyperparameter):
            StrategySpec(kind="split", n_calib=10, k=5)

    def test_fraction_bounds(self):
        with pytest.raises(InvalidHyperparameter):
            split(0.0)
        with pytest.raises(InvalidHyperparameter):
            split(1.0)
        assert split(0.5).n_calib == 0.5

    def test_cv_needs_k(self):
        with pytest.raises(InvalidHyperparameter):
            StrategySpec(kind="cross_validation", mode="plus")
        with pytest.raises(InvalidHyperparameter):
            cross_validation(k=1)

    def test_mode_required_for_resampling(self):
        with pytest.raises(InvalidHyperparameter):
            StrategySpec(kind="jackknife")

    def test_bootstrap_count(self):
        with pytest.raises(InvalidHyperparameter):
            jackknife_bootstrap(n_bootstraps=0)

    def test_factories(self):
        assert cross_validation(5).kind == "cross_validation"
        assert jackknife().mode == "plus"
        assert jackknife_bootstrap(10, mode="single_model").n_bootstraps == 10


class TestSplit:
    def test_partition_sizes(self):
        data = gaussian_matrix(1, 40)
        cm = calibrate_split(KNN, data, 0.25, seed=7)
        assert cm.n_entries == 10
        assert len(set(cm.model_train_indices[0])) == 30
        assert cm.cal_rows.shape == (10, 4)

    def test_count_and_fraction_agree(self):
        data = gaussian_matrix(2, 40)
        a = calibrate_split(KNN, data, 10, seed=7)
        b = calibrate_split(KNN, data, 0.25, seed=7)
        np.testing.assert_array_equal(a.entry_scores, b.entry_scores)

    def test_calibration_cannot_swallow_training(self):
        data = gaussian_matrix(3, 10)
        with pytest.raises(CalibrationTooLarge):
            calibrate_split(KNN, data, 10, seed=0)
        with pytest.raises(CalibrationTooLarge):
            calibrate_split(KNN, data, 11, seed=0)

    def test_entries_are_out_of_sample(self):
        # every calibration row must be absent from the fit subset
        data = gaussian_matrix(4, 30)
        cm = calibrate_split(KNN, data, 0.5, seed=3)
        fit_rows = data.values[list(cm.model_train_indices[0])]
        for row in cm.cal_rows:
            assert not (fit_rows == row).all(axis=1).any()

    def test_deterministic(self):
        data = gaussian_matrix(5, 30)
        a = calibrate_split(KNN, data, 0.5, seed=3)
        b = calibrate_split(KNN, data, 0.5, seed=3)
        c = calibrate_split(KNN, data, 0.5, seed=4)
        np.testing.assert_array_equal(a.entry_scores, b.entry_scores)
        assert not np.array_equal(a.entry_scores, c.entry_scores)


class TestDetached:
    def test_scores_are_function_outputs(self):
        calib = gaussian_matrix(6, 20, d=2)
        scorer = wrap_detached(lambda X: X[:, 0], "higher_is_anomalous")
        cm = calibrate_detached(scorer, calib)
        np.testing.assert_array_equal(cm.entry_scores, calib.values[:, 0])
        assert cm.detached


class TestCrossValidation:
    def test_every_row_becomes_an_entry(self):
        data = gaussian_matrix(7, 33)
        cm = calibrate_cv(KNN, data, 5, "plus", seed=1)
        assert cm.n_entries == 33
        assert len(cm.models) == 5

    def test_fold_sizes_balanced(self):
        data = gaussian_matrix(8, 33)
        cm = calibrate_cv(KNN, data, 5, "plus", seed=1)
        sizes = [len(idx) for idx in cm.model_train_indices]
        # 33 rows in 5 folds: three folds of 7 and two of 6
        assert sorted(33 - s for s in sizes) == [6, 6, 7, 7, 7]

    def test_entry_pairs_with_out_of_fold_model(self):
        data = gaussian_matrix(9, 20)
        cm = calibrate_cv(KNN, data, 4, "plus", seed=2)
        for entry_idx, models in enumerate(cm.entry_models):
            assert len(models) == 1
            rows = cm.model_train_indices[models[0]]
            row = cm.cal_rows[entry_idx]
            in_fit = (data.values[list(rows)] == row).all(axis=1).any()
            assert not in_fit

    def test_single_model_refits_once(self):
        data = gaussian_matrix(10, 20)
        cm = calibrate_cv(KNN, data, 4, "single_model", seed=2)
        assert len(cm.models) == 1
        assert len(cm.model_train_indices[0]) == 20
        assert all(m == (0,) for m in cm.entry_models)

    def test_k_out_of_range(self):
        data = gaussian_matrix(11, 6)
        with pytest.raises(KOutOfRange):
            calibrate_cv(KNN, data, 7, "plus", seed=0)


class TestJackknife:
    def test_equals_cv_with_k_equal_n(self):
        # leave-one-out is exactly n-fold cross-validation
        data = gaussian_matrix(12, 12)
        jk = calibrate_jackknife(KNN, data, "plus", seed=5)
        cv = calibrate_cv(KNN, data, 12, "plus", seed=5)
        np.testing.assert_array_equal(jk.entry_scores, cv.entry_scores)
        assert jk.entry_models == cv.entry_models
        test = gaussian_matrix(13, 6)
        np.testing.assert_array_equal(score_matrix(jk, test).values,
                                      score_matrix(cv, test).values)


class TestBootstrap:
    def test_oob_fraction_near_e_inverse(self):
        # P(row out of bag) = (1 - 1/n)^n -> 1/e; one bootstrap, n = 10000
        data = gaussian_matrix(14, 10000, d=1)
        forest = ScorerSpec(kind="isolation_forest", n_trees=5)
        cm = calibrate_bootstrap(forest, data, 1, "plus", seed=42)
        oob_fraction = cm.n_entries / 10000
        assert abs(oob_fraction - np.exp(-1)) < 0.03

    def test_dropped_rows_accounted(self):
        data = gaussian_matrix(15, 50, d=2)
        cm = calibrate_bootstrap(KNN, data, 2, "plus", seed=3)
        assert cm.n_entries + cm.dropped_rows == 50

    def test_entry_models_are_oob_sets(self):
        data = gaussian_matrix(16, 40, d=2)
        cm = calibrate_bootstrap(KNN, data, 5, "plus", seed=9)
        for entry_idx, mset in enumerate(cm.entry_models):
            assert len(mset) >= 1
            row = cm.cal_rows[entry_idx]
            for m in mset:
                in_bag = (data.values[list(cm.model_train_indices[m])] == row) \
                    .all(axis=1).any()
                assert not in_bag

    def test_single_model_keeps_oob_entries(self):
        data = gaussian_matrix(17, 60, d=2)
        plus = calibrate_bootstrap(KNN, data, 4, "plus", seed=1)
        single = calibrate_bootstrap(KNN, data, 4, "single_model", seed=1)
        assert single.n_entries == plus.n_entries
        assert len(single.models) == 1


class TestPairedRankCounts:
    def test_single_model_counts_match_bruteforce(self):
        data = gaussian_matrix(18, 25)
        cm = calibrate_split(KNN, data, 0.4, seed=1)
        test = gaussian_matrix(19, 7)
        ts = score_matrix(cm, test)
        ge, gt, eq = paired_rank_counts(cm, ts)
        for j in range(7):
            assert ge[j] == int((cm.entry_scores >= ts.values[j]).sum())
            assert gt[j] == int((cm.entry_scores > ts.values[j]).sum())
            assert eq[j] == ge[j] - gt[j]

    def test_plus_mode_counts_match_bruteforce(self):
        data = gaussian_matrix(20, 18)
        cm = calibrate_cv(KNN, data, 3, "plus", seed=4)
        test = gaussian_matrix(21, 5)
        ts = score_matrix(cm, test)
        ge, gt, _ = paired_rank_counts(cm, ts)
        expected_ge = np.zeros(5, dtype=int)
        expected_gt = np.zeros(5, dtype=int)
        for i, mset in enumerate(cm.entry_models):
            paired = np.median(ts.values[:, list(mset)], axis=1)
            expected_ge += cm.entry_scores[i] >= paired
            expected_gt += cm.entry_scores[i] > paired
        np.testing.assert_array_equal(ge, expected_ge)
        np.testing.assert_array_equal(gt, expected_gt)

    def test_pairing_guard(self):
        data = gaussian_matrix(22, 20)
        cm_a = calibrate_split(KNN, data, 0.5, seed=1)
        cm_b = calibrate_cv(KNN, data, 4, "plus", seed=1)
        ts_b = score_matrix(cm_b, gaussian_matrix(23, 4))
        with pytest.raises(DimensionMismatch):
            paired_rank_counts(cm_a, ts_b)

    def test_aggregate_scores_pool_all_models(self):
        data = gaussian_matrix(24, 21)
        cm = calibrate_cv(KNN, data, 3, "plus", seed=2)
        test = gaussian_matrix(25, 6)
        ts = score_matrix(cm, test)
        agg = aggregate_test_scores(cm, ts)
        np.testing.assert_allclose(agg, np.median(ts.values, axis=1))


class TestRowOrderInvariance:
    def test_shuffled_input_still_partitions_out_of_sample(self):
        data = gaussian_matrix(26, 30)
        perm = make_rng(0).permutation(30)
        shuffled = DataMatrix(data.values[perm])
        cm = calibrate_split(KNN, shuffled, 0.5, seed=8)
        fit_rows = shuffled.values[list(cm.model_train_indices[0])]
        for row in cm.cal_rows:
            assert not (fit_rows == row).all(axis=1).any()

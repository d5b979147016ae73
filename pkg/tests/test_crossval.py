"""Fold construction, leak-free fitting, and per-voxel penalty selection."""

import numpy as np
import pytest

from voxelenc import ValidationError
from voxelenc.crossval import CvReport, cross_validate, make_folds
from voxelenc.ridge import RidgeConfig, predict
from voxelenc.stats import pearson


def planted_dataset(rng, n=100, d=6, v=12, noise=0.0):
    Z = rng.standard_normal((n, d))
    W = rng.standard_normal((d, v))
    X = Z @ W + 1.5
    if noise:
        X = X + noise * rng.standard_normal((n, v))
    return Z, X


class TestMakeFolds:
    def test_contiguous_partition(self):
        folds = make_folds(10, 5)
        assert [f.tolist() for f in folds] == [
            [0, 1], [2, 3], [4, 5], [6, 7], [8, 9]
        ]
        folds = make_folds(11, 5)
        assert [len(f) for f in folds] == [3, 2, 2, 2, 2]
        assert np.array_equal(np.concatenate(folds), np.arange(11))

    def test_by_run_keeps_runs_whole(self):
        lengths = [7, 5, 9, 4, 6, 8]
        folds = make_folds(39, 3, scheme="by_run", seed=2, run_lengths=lengths)
        covered = np.sort(np.concatenate(folds))
        assert np.array_equal(covered, np.arange(39))
        bounds = np.cumsum([0] + lengths)
        for fold in folds:
            members = set(fold.tolist())
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                run = set(range(lo, hi))
                # a run is never split across folds
                assert run <= members or not (run & members)

    def test_by_run_seed_determinism(self):
        lengths = [4] * 10
        a = make_folds(40, 5, scheme="by_run", seed=7, run_lengths=lengths)
        b = make_folds(40, 5, scheme="by_run", seed=7, run_lengths=lengths)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa, fb)

    def test_validation(self):
        with pytest.raises(ValidationError):
            make_folds(10, 1)
        with pytest.raises(ValidationError):
            make_folds(3, 5)
        with pytest.raises(ValidationError):
            make_folds(10, 2, scheme="by_run")
        with pytest.raises(ValidationError):
            make_folds(10, 2, scheme="by_run", run_lengths=[5, 6])
        with pytest.raises(ValidationError):
            make_folds(10, 4, scheme="by_run", run_lengths=[5, 5])
        with pytest.raises(ValidationError):
            make_folds(10, 2, scheme="spiral")


class TestCrossValidate:
    def test_noise_free_signal_recovers(self):
        rng = np.random.default_rng(80)
        Z, X = planted_dataset(rng, n=120, d=5, v=10)
        rep = cross_validate(Z, X, RidgeConfig(lambdas=[1e-6, 1e-2, 1.0]))
        assert isinstance(rep, CvReport)
        assert np.all(rep.r > 0.999)
        assert not rep.excluded.any()

    def test_pure_noise_stays_near_zero(self):
        # pooled out-of-fold r carries a small negative bias from the
        # held-out intercept; at 600 samples it sits near -0.04
        rng = np.random.default_rng(81)
        Z = rng.standard_normal((600, 4))
        X = rng.standard_normal((600, 40))
        rep = cross_validate(Z, X)
        assert -0.08 < rep.r.mean() < 0.05
        assert np.all(np.abs(rep.r) < 0.35)

    def test_report_internal_consistency(self):
        rng = np.random.default_rng(82)
        Z, X = planted_dataset(rng, n=90, d=4, v=8, noise=1.0)
        lambdas = np.logspace(-2, 3, 6)
        rep = cross_validate(Z, X, RidgeConfig(lambdas=lambdas), n_folds=3)
        assert rep.fold_r.shape == (3, 6, 8)
        assert rep.per_fold_r.shape == (3, 8)
        assert np.array_equal(rep.chosen_lambda, lambdas[rep.chosen_index])
        # chosen index maximizes the mean fold correlation
        mean_r = rep.fold_r.mean(axis=0)
        np.testing.assert_array_equal(rep.chosen_index, np.argmax(mean_r, axis=0))
        # per_fold_r rows are the grid entries at the chosen index
        for vox in range(8):
            np.testing.assert_array_equal(
                rep.per_fold_r[:, vox], rep.fold_r[:, rep.chosen_index[vox], vox]
            )

    def test_pooled_r_matches_manual_assembly(self):
        rng = np.random.default_rng(83)
        Z, X = planted_dataset(rng, n=60, d=3, v=5, noise=2.0)
        cfg = RidgeConfig(lambdas=[0.1, 10.0])
        rep = cross_validate(Z, X, cfg, n_folds=3, keep_fold_fits=True)
        folds = make_folds(60, 3)
        for vox in range(5):
            k = rep.chosen_index[vox]
            pred = np.empty(60)
            for f, test_idx in enumerate(folds):
                fit = rep.fold_fits[f]
                pred[test_idx] = predict(
                    Z[test_idx], fit.weights[k], fit.intercepts[k]
                )[:, vox]
            assert rep.r[vox] == pytest.approx(pearson(pred, X[:, vox]), abs=1e-12)

    def test_flat_voxel_excluded(self):
        rng = np.random.default_rng(84)
        Z, X = planted_dataset(rng, n=80, d=4, v=6, noise=0.5)
        X[:, 2] = 7.0
        rep = cross_validate(Z, X)
        assert rep.excluded[2] and rep.excluded.sum() == 1
        assert rep.r[2] == 0.0
        assert np.isnan(rep.chosen_lambda[2])
        assert rep.chosen_index[2] == -1
        assert np.all(rep.per_fold_r[:, 2] == 0.0)
        assert np.isfinite(rep.chosen_lambda[[0, 1, 3, 4, 5]]).all()

    def test_no_leakage_from_test_fold(self):
        # fold 0's fit trains on folds 1..4 only, so mangling fold 0's rows
        # must leave fold 0's weights bit-identical
        rng = np.random.default_rng(85)
        Z, X = planted_dataset(rng, n=100, d=5, v=6, noise=1.0)
        rep_a = cross_validate(Z, X, keep_fold_fits=True)
        folds = make_folds(100, 5)
        X_bad = X.copy()
        X_bad[folds[0]] += 1e6
        Z_bad = Z.copy()
        Z_bad[folds[0]] *= -3.0
        rep_b = cross_validate(Z_bad, X_bad, keep_fold_fits=True)
        np.testing.assert_array_equal(
            rep_a.fold_fits[0].weights, rep_b.fold_fits[0].weights
        )
        np.testing.assert_array_equal(
            rep_a.fold_fits[0].intercepts, rep_b.fold_fits[0].intercepts
        )

    def test_small_fold_rejected(self):
        rng = np.random.default_rng(86)
        Z, X = planted_dataset(rng, n=8, d=2, v=3)
        with pytest.raises(ValidationError, match="fold"):
            cross_validate(Z, X, n_folds=4)

    def test_by_run_scheme(self):
        rng = np.random.default_rng(87)
        Z, X = planted_dataset(rng, n=60, d=4, v=5, noise=0.2)
        rep = cross_validate(
            Z, X, n_folds=3, scheme="by_run", seed=1,
            run_lengths=[12, 8, 10, 14, 16],
        )
        assert rep.n_folds == 3
        assert np.all(rep.r > 0.8)

    def test_determinism(self):
        rng = np.random.default_rng(88)
        Z, X = planted_dataset(rng, n=70, d=4, v=6, noise=0.7)
        a = cross_validate(Z, X)
        b = cross_validate(Z, X)
        np.testing.assert_array_equal(a.r, b.r)
        np.testing.assert_array_equal(a.chosen_lambda, b.chosen_lambda)

"""Cross-validated encoder scoring with per-voxel penalty selection.

Folds are contiguous TR blocks by default so temporally adjacent samples stay
together; a by-run scheme assigns whole runs to folds for multi-run sessions.
All standardization happens inside each fold's fit on train rows only, never
on held-out rows.

Penalty selection runs per voxel: the grid point with the best mean
correlation across folds wins, then the pooled out-of-fold prediction at that
penalty gives the headline score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .ridge import RidgeConfig, fit_path, predict
from .stats import pearson_many


def make_folds(n_samples, n_folds, scheme="contiguous", seed=0, run_lengths=None):
    """Partition sample indices into test folds.

    contiguous: near-equal consecutive blocks, earlier blocks take the
    remainder. by_run: runs are shuffled by `seed` and dealt round-robin;
    needs `run_lengths` summing to `n_samples` and at least one run per fold.
    """
    if n_folds < 2:
        raise ValidationError(f"need at least 2 folds, got {n_folds}")
    if n_folds > n_samples:
        raise ValidationError(
            f"{n_folds} folds cannot partition {n_samples} samples"
        )
    if scheme == "contiguous":
        return [np.asarray(f) for f in np.array_split(np.arange(n_samples), n_folds)]
    if scheme == "by_run":
        if run_lengths is None:
            raise ValidationError("by_run folding requires run_lengths")
        run_lengths = [int(n) for n in run_lengths]
        if any(n <= 0 for n in run_lengths):
            raise ValidationError("run_lengths must be positive")
        if sum(run_lengths) != n_samples:
            raise ValidationError(
                f"run_lengths sum to {sum(run_lengths)}, expected {n_samples}"
            )
        if len(run_lengths) < n_folds:
            raise ValidationError(
                f"{len(run_lengths)} runs cannot fill {n_folds} folds"
            )
        bounds = np.concatenate([[0], np.cumsum(run_lengths)])
        order = np.random.default_rng(seed).permutation(len(run_lengths))
        folds = [[] for _ in range(n_folds)]
        for slot, run in enumerate(order):
            folds[slot % n_folds].append(np.arange(bounds[run], bounds[run + 1]))
        return [np.sort(np.concatenate(f)) for f in folds]
    raise ValidationError(f"unknown folding scheme {scheme!r}")


def _zero_variance_columns(X):
    sd = X.std(axis=0)
    col_mag = np.max(np.abs(X), axis=0, initial=0.0)
    return sd <= 1e-13 * np.maximum(1.0, col_mag)


@dataclass(frozen=True)
class CvReport:
    """Everything the scoring stage produces for one subject."""

    r: np.ndarray  # pooled out-of-fold correlation at the chosen penalty
    chosen_lambda: np.ndarray  # per voxel; NaN where excluded
    chosen_index: np.ndarray  # grid index per voxel; -1 where excluded
    per_fold_r: np.ndarray  # (n_folds, n_voxels) at the chosen penalty
    fold_r: np.ndarray  # (n_folds, n_lambdas, n_voxels) full grid
    excluded: np.ndarray  # voxels with flat measured signal
    lambdas: np.ndarray
    n_folds: int
    fold_fits: list = field(default_factory=list, repr=False)


def cross_validate(Z, X, config=None, n_folds=5, scheme="contiguous", seed=0,
                   run_lengths=None, keep_fold_fits=False, n_workers=None):
    """Score every voxel by cross-validated out-of-fold correlation."""
    Z = np.asarray(Z, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if Z.ndim != 2 or X.ndim != 2 or Z.shape[0] != X.shape[0]:
        raise ShapeError(
            f"design {Z.shape} and responses {X.shape} must share rows"
        )
    if config is None:
        config = RidgeConfig()
    n, n_vox = X.shape
    lambdas = np.asarray(config.lambdas, dtype=np.float64)
    n_lam = lambdas.size

    folds = make_folds(n, n_folds, scheme=scheme, seed=seed,
                       run_lengths=run_lengths)
    for k, fold in enumerate(folds):
        if fold.size < 3:
            raise ValidationError(
                f"fold {k} holds {fold.size} samples; correlation needs >= 3"
            )

    excluded = _zero_variance_columns(X)
    fold_r = np.zeros((len(folds), n_lam, n_vox))
    oof_pred = np.empty((n_lam, n, n_vox))
    fits = []
    for k, test_idx in enumerate(folds):
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        fit = fit_path(Z[train_mask], X[train_mask], config, n_workers=n_workers)
        if keep_fold_fits:
            fits.append(fit)
        Z_test, X_test = Z[test_idx], X[test_idx]
        for j in range(n_lam):
            pred = predict(Z_test, fit.weights[j], fit.intercepts[j])
            oof_pred[j, test_idx] = pred
            fold_r[k, j], _ = pearson_many(pred, X_test)

    mean_r = fold_r.mean(axis=0)  # (n_lam, n_vox)
    chosen_index = np.argmax(mean_r, axis=0).astype(np.int64)
    chosen_lambda = lambdas[chosen_index]

    r = np.zeros(n_vox)
    for j in np.unique(chosen_index):
        cols = np.flatnonzero((chosen_index == j) & ~excluded)
        if cols.size:
            r[cols], _ = pearson_many(oof_pred[j][:, cols], X[:, cols])

    per_fold_r = np.take_along_axis(
        fold_r, chosen_index[None, None, :], axis=1
    ).reshape(len(folds), n_vox)

    chosen_index[excluded] = -1
    chosen_lambda = chosen_lambda.copy()
    chosen_lambda[excluded] = np.nan
    r[excluded] = 0.0
    per_fold_r[:, excluded] = 0.0

    return CvReport(
        r=r,
        chosen_lambda=chosen_lambda,
        chosen_index=chosen_index,
        per_fold_r=per_fold_r,
        fold_r=fold_r,
        excluded=excluded,
        lambdas=lambdas,
        n_folds=len(folds),
        fold_fits=fits,
    )

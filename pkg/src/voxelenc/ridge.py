"""Regularized multi-target linear encoders.

One design matrix predicts thousands of voxel columns at once. The L2 path is
solved through a single thin SVD shared across the whole penalty grid, so a
10-point grid costs one decomposition plus cheap per-penalty rescaling. The
L1 alternative runs coordinate descent vectorized across targets.

Standardization statistics always come from the rows passed in, never from
held-out data; cross-validation passes train rows only.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateSolutionError,
    ShapeError,
    ValidationError,
)

DEFAULT_LAMBDAS = np.logspace(-2, 6, 10)

# target columns are always solved in blocks of this fixed width; workers
# only schedule blocks, so the arithmetic never depends on the worker count
BLOCK_COLS = 256


def resolve_workers(n_workers=None):
    """Worker count: explicit argument, else VOXELENC_THREADS, else 1."""
    if n_workers is None:
        env = os.environ.get("VOXELENC_THREADS")
        if env is None or env == "":
            return 1
        try:
            n_workers = int(env)
        except ValueError:
            raise ValidationError(
                f"VOXELENC_THREADS must be an integer, got {env!r}"
            ) from None
    n_workers = int(n_workers)
    if n_workers < 1:
        raise ValidationError(f"worker count must be >= 1, got {n_workers}")
    return n_workers


@dataclass(frozen=True)
class RidgeConfig:
    """Fit settings shared by both penalty types."""

    lambdas: np.ndarray = field(default_factory=lambda: DEFAULT_LAMBDAS.copy())
    penalty: str = "l2"
    standardize: bool = True
    fit_intercept: bool = True

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lambdas, dtype=np.float64))
        object.__setattr__(self, "lambdas", lam)
        if lam.ndim != 1 or lam.size == 0:
            raise ValidationError("lambdas must be a non-empty 1-D sequence")
        if not np.isfinite(lam).all() or (lam < 0).any():
            raise ValidationError("lambdas must be finite and non-negative")
        if self.penalty not in ("l2", "l1"):
            raise ValidationError(f"penalty must be 'l2' or 'l1', got {self.penalty!r}")


@dataclass(frozen=True)
class PathFit:
    """Solutions along the penalty grid, in raw (unstandardized) coordinates.

    weights[k] maps a raw design row to raw targets for lambdas[k];
    predictions are Z @ weights[k] + intercepts[k].
    """

    weights: np.ndarray  # (n_lambdas, n_features, n_targets)
    intercepts: np.ndarray  # (n_lambdas, n_targets)
    lambdas: np.ndarray
    rank: int


def _check_xy(Z, X):
    Z = np.asarray(Z, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if Z.ndim != 2 or X.ndim != 2:
        raise ShapeError(f"expected 2-D design and targets, got {Z.shape} and {X.shape}")
    if Z.shape[0] != X.shape[0]:
        raise ShapeError(
            f"design has {Z.shape[0]} rows but targets have {X.shape[0]}"
        )
    if Z.shape[0] == 0:
        raise ValidationError("cannot fit on zero rows")
    if not np.isfinite(Z).all() or not np.isfinite(X).all():
        raise ValidationError("design and targets must be finite")
    return Z, X


def _safe_scale(M):
    sd = M.std(axis=0)
    col_mag = np.max(np.abs(M), axis=0, initial=0.0)
    constant = sd <= 1e-13 * np.maximum(1.0, col_mag)
    return np.where(constant, 1.0, sd)


def _moments(Z, X, fit_intercept, standardize):
    n_d, n_v = Z.shape[1], X.shape[1]
    mu_z = Z.mean(axis=0) if fit_intercept else np.zeros(n_d)
    mu_x = X.mean(axis=0) if fit_intercept else np.zeros(n_v)
    if standardize:
        # a std at rounding-noise level relative to the column magnitude is
        # a constant column; scaling by it would amplify pure noise
        sd_z = _safe_scale(Z)
        sd_x = _safe_scale(X)
    else:
        sd_z = np.ones(n_d)
        sd_x = np.ones(n_v)
    return mu_z, sd_z, mu_x, sd_x


def _to_raw(Ws, mu_z, sd_z, mu_x, sd_x):
    W = Ws * (sd_x[None, :] / sd_z[:, None])
    intercept = mu_x - mu_z @ W
    return W, intercept


def fit_ridge_path(Z, X, lambdas, *, fit_intercept=True, standardize=True,
                   n_workers=None):
    """L2 solutions for every penalty in `lambdas` from one thin SVD.

    A zero penalty demands a full-column-rank design; otherwise the system
    has a null space and the fit raises DegenerateSolutionError instead of
    silently picking one of infinitely many solutions.

    Target columns are processed in fixed-width blocks regardless of
    `n_workers`, so results are bit-identical for any worker count.
    """
    Z, X = _check_xy(Z, X)
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))
    if not np.isfinite(lambdas).all() or (lambdas < 0).any():
        raise ValidationError("lambdas must be finite and non-negative")
    workers = resolve_workers(n_workers)
    n_d, n_v = Z.shape[1], X.shape[1]
    mu_z, sd_z, mu_x, sd_x = _moments(Z, X, fit_intercept, standardize)
    Zs = (Z - mu_z) / sd_z
    Xs = (X - mu_x) / sd_x

    U, s, Vt = np.linalg.svd(Zs, full_matrices=False)
    tol = s.max() * max(Zs.shape) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int((s > tol).sum())

    d_factors = []
    for lam in lambdas:
        if lam == 0.0:
            if rank < n_d:
                raise DegenerateSolutionError(
                    f"unpenalized fit with rank {rank} < {n_d} features",
                    null_dim=n_d - rank,
                )
            d_factors.append(1.0 / s)
        else:
            d_factors.append(s / (s * s + lam))

    weights = np.empty((lambdas.size, n_d, n_v))
    intercepts = np.empty((lambdas.size, n_v))
    bounds = [(lo, min(lo + BLOCK_COLS, n_v)) for lo in range(0, n_v, BLOCK_COLS)]

    def solve_block(lo, hi):
        UtX = U.T @ Xs[:, lo:hi]
        wb = np.empty((lambdas.size, n_d, hi - lo))
        ib = np.empty((lambdas.size, hi - lo))
        for k, d in enumerate(d_factors):
            Ws = Vt.T @ (d[:, None] * UtX)
            wb[k], ib[k] = _to_raw(Ws, mu_z, sd_z, mu_x[lo:hi], sd_x[lo:hi])
        return wb, ib

    if workers == 1 or len(bounds) <= 1:
        results = [solve_block(lo, hi) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda b: solve_block(*b), bounds))
    for (lo, hi), (wb, ib) in zip(bounds, results):
        weights[:, :, lo:hi] = wb
        intercepts[:, lo:hi] = ib
    return PathFit(weights=weights, intercepts=intercepts, lambdas=lambdas, rank=rank)


def _soft(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def fit_lasso(Z, X, lam, *, fit_intercept=True, standardize=False, tol=1e-8,
              max_sweeps=10000):
    """One L1 solution by cyclic coordinate descent, all targets at once.

    Minimizes 0.5 * ||X - Z W||_F^2 + lam * sum|W| per target, so the null
    solution wins exactly when lam >= max|Z^T x|. Returns (weights,
    intercepts) in raw coordinates.
    """
    Z, X = _check_xy(Z, X)
    if not np.isfinite(lam) or lam < 0:
        raise ValidationError(f"lam must be finite and non-negative, got {lam}")
    mu_z, sd_z, mu_x, sd_x = _moments(Z, X, fit_intercept, standardize)
    Zs = np.ascontiguousarray((Z - mu_z) / sd_z)
    Xs = (X - mu_x) / sd_x

    n_d, n_v = Zs.shape[1], Xs.shape[1]
    col_sq = (Zs * Zs).sum(axis=0)
    active_cols = np.flatnonzero(col_sq > 0)
    W = np.zeros((n_d, n_v))
    R = Xs.copy()  # residual X - Z W, updated in place per coordinate

    delta = np.inf
    for _ in range(max_sweeps):
        delta = 0.0
        for j in active_cols:
            zj = Zs[:, j]
            rho = zj @ R + col_sq[j] * W[j]
            w_new = _soft(rho, lam) / col_sq[j]
            step = w_new - W[j]
            if step.any():
                R -= np.outer(zj, step)
                W[j] = w_new
                delta = max(delta, float(np.max(np.abs(step))))
        scale = max(1.0, float(np.max(np.abs(W))) if W.size else 1.0)
        if delta <= tol * scale:
            break
    else:
        raise ConvergenceError(
            f"coordinate descent did not settle in {max_sweeps} sweeps",
            delta=delta,
        )
    return _to_raw(W, mu_z, sd_z, mu_x, sd_x)


def fit_path(Z, X, config, n_workers=None):
    """Fit the whole penalty grid under `config`, returning a PathFit."""
    if config.penalty == "l2":
        return fit_ridge_path(
            Z, X, config.lambdas,
            fit_intercept=config.fit_intercept,
            standardize=config.standardize,
            n_workers=n_workers,
        )
    Z, X = _check_xy(Z, X)
    n_d, n_v = Z.shape[1], X.shape[1]
    weights = np.empty((config.lambdas.size, n_d, n_v))
    intercepts = np.empty((config.lambdas.size, n_v))
    for k, lam in enumerate(config.lambdas):
        weights[k], intercepts[k] = fit_lasso(
            Z, X, lam,
            fit_intercept=config.fit_intercept,
            standardize=config.standardize,
        )
    rank = int(np.linalg.matrix_rank(Z - Z.mean(0))) if config.fit_intercept \
        else int(np.linalg.matrix_rank(Z))
    return PathFit(weights=weights, intercepts=intercepts,
                   lambdas=np.asarray(config.lambdas, dtype=np.float64), rank=rank)


def predict(Z, weights, intercepts):
    """Raw-coordinate predictions Z @ weights + intercepts for one penalty."""
    Z = np.asarray(Z, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if Z.ndim != 2 or weights.ndim != 2 or Z.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"design {Z.shape} does not match weights {weights.shape}"
        )
    return Z @ weights + np.asarray(intercepts, dtype=np.float64)

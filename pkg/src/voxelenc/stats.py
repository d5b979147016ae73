"""Correlation, paired group tests, and multiplicity control.

The t distribution's tail probability is computed through the regularized
incomplete beta function, evaluated with a Lentz continued fraction in log
space. No stats library is involved, so the p-value path is auditable end to
end and identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, log

import numpy as np

from .errors import (
    DegenerateTestError,
    ShapeError,
    UndefinedCorrelationError,
    ValidationError,
)


def pearson(a, b):
    """Correlation of two 1-D samples; undefined inputs raise."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 3:
        raise ValidationError("correlation needs at least 3 samples")
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt((ac * ac).sum() * (bc * bc).sum())
    if denom == 0.0:
        raise UndefinedCorrelationError(
            "at least one input has zero variance; correlation is undefined"
        )
    return float(np.clip((ac * bc).sum() / denom, -1.0, 1.0))


def pearson_many(A, B):
    """Columnwise correlations of two (n, m) matrices.

    Returns (r, defined) where columns with zero variance on either side get
    r = 0 and defined = False instead of raising, so callers can mask.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2:
        raise ShapeError(f"expected matching 2-D arrays, got {A.shape} and {B.shape}")
    if A.shape[0] < 3:
        raise ValidationError("correlation needs at least 3 samples")
    Ac = A - A.mean(axis=0)
    Bc = B - B.mean(axis=0)
    va = (Ac * Ac).sum(axis=0)
    vb = (Bc * Bc).sum(axis=0)
    defined = (va > 0) & (vb > 0)
    denom = np.sqrt(va * vb)
    denom[~defined] = 1.0
    r = np.clip((Ac * Bc).sum(axis=0) / denom, -1.0, 1.0)
    r[~defined] = 0.0
    return r, defined


_LENTZ_TINY = 1e-300
_LENTZ_EPS = 1e-15
_LENTZ_MAX_ITER = 500


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _LENTZ_TINY:
        d = _LENTZ_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _LENTZ_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _LENTZ_TINY:
            d = _LENTZ_TINY
        c = 1.0 + aa / c
        if abs(c) < _LENTZ_TINY:
            c = _LENTZ_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _LENTZ_TINY:
            d = _LENTZ_TINY
        c = 1.0 + aa / c
        if abs(c) < _LENTZ_TINY:
            c = _LENTZ_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _LENTZ_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a, b, x):
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValidationError("beta parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * np.log1p(-x)
    )
    front = np.exp(ln_front)
    # the continued fraction converges fast below the distribution mean
    if x < (a + 1.0) / (a + b + 2.0):
        return float(front * _betacf(a, b, x) / a)
    return float(1.0 - front * _betacf(b, a, 1.0 - x) / b)


def t_sf_two_sided(t, df):
    """Two-sided tail probability of Student's t with `df` degrees of freedom."""
    if df <= 0:
        raise ValidationError(f"degrees of freedom must be positive, got {df}")
    t = float(t)
    if np.isnan(t):
        return float("nan")
    if np.isinf(t):
        return 0.0
    return betainc_reg(df / 2.0, 0.5, df / (df + t * t))


def paired_ttest(a, b):
    """Two-sided paired t-test on matched samples, returns (t, p, df).

    A zero-variance difference vector is degenerate: all-equal samples give
    (t=0, p=1); identical nonzero shifts admit no finite statistic and raise.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"paired samples differ in length: {a.shape[0]} vs {b.shape[0]}")
    n = a.shape[0]
    if n < 2:
        raise ValidationError("paired test needs at least 2 pairs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0, df
        raise DegenerateTestError(
            "all pairs shifted by the same nonzero amount; t is unbounded"
        )
    t = mean / (sd / np.sqrt(n))
    return float(t), t_sf_two_sided(t, df), df


def fdr_bh(p, alpha=0.05):
    """Benjamini-Hochberg step-up control, returns (reject, q).

    q[i] is the smallest level at which hypothesis i would be rejected
    (monotone by construction).
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    if np.isnan(p).any() or (p < 0).any() or (p > 1).any():
        raise ValidationError("p-values must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    q_ranked = ranked * m / np.arange(1, m + 1)
    q_ranked = np.minimum.accumulate(q_ranked[::-1])[::-1]
    q_ranked = np.minimum(q_ranked, 1.0)
    q = np.empty(m)
    q[order] = q_ranked
    reject = q <= alpha
    return reject, q


@dataclass(frozen=True)
class GroupStatMap:
    """Per-voxel paired comparison across subjects."""

    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    reject: np.ndarray
    direction: np.ndarray  # sign of the mean paired difference, int8
    df: int
    alpha: float


def _subject_r_rows(reports):
    rows = []
    for rep in reports:
        r = getattr(rep, "r", rep)
        rows.append(np.asarray(r, dtype=np.float64).ravel())
    lengths = {row.shape[0] for row in rows}
    if len(lengths) != 1:
        raise ShapeError(f"subjects disagree on voxel count: {sorted(lengths)}")
    return np.vstack(rows)


def compare_models(reports_a, reports_b, alpha=0.05, fisher_z=False):
    """Paired t-test per voxel between two model variants across subjects.

    `reports_a`/`reports_b` are per-subject score vectors (or objects with an
    `r` attribute), matched by position. `fisher_z` applies atanh before
    testing. Voxels where every subject shows a zero difference get t = 0 and
    p = 1; identical nonzero shifts across all subjects give an unbounded
    statistic, reported as t = +/-inf with p = 0.
    """
    A = _subject_r_rows(reports_a)
    B = _subject_r_rows(reports_b)
    if A.shape != B.shape:
        raise ShapeError(f"group shapes differ: {A.shape} vs {B.shape}")
    n_sub = A.shape[0]
    if n_sub < 2:
        raise ValidationError("group comparison needs at least 2 subjects")
    if fisher_z:
        A = np.arctanh(np.clip(A, -1 + 1e-12, 1 - 1e-12))
        B = np.arctanh(np.clip(B, -1 + 1e-12, 1 - 1e-12))
    D = A - B
    mean = D.mean(axis=0)
    sd = D.std(axis=0, ddof=1)
    df = n_sub - 1

    t = np.zeros(D.shape[1])
    p = np.ones(D.shape[1])
    zero_sd = sd == 0.0
    stuck = zero_sd & (mean != 0.0)  # constant nonzero shift: unbounded t
    t[stuck] = np.sign(mean[stuck]) * np.inf
    p[stuck] = 0.0
    ok = ~zero_sd
    t[ok] = mean[ok] / (sd[ok] / np.sqrt(n_sub))
    p[ok] = [t_sf_two_sided(tv, df) for tv in t[ok]]
    reject, q = fdr_bh(p, alpha=alpha)
    return GroupStatMap(
        t=t, p=p, q=q, reject=reject,
        direction=np.sign(mean).astype(np.int8), df=df, alpha=alpha,
    )


def summarize_roi(r, atlas, excluded=None):
    """Aggregate a per-voxel score vector over atlas networks.

    Returns a list of dicts, one per label code in ascending order, with the
    mean and population std over scored (non-excluded) voxels. Networks whose
    voxels are all excluded report n_scored = 0 and NaN summaries.
    """
    r = np.asarray(r, dtype=np.float64).ravel()
    if r.shape[0] != atlas.n_voxels:
        raise ShapeError(
            f"{r.shape[0]} scores for an atlas of {atlas.n_voxels} voxels"
        )
    if excluded is None:
        excluded = np.zeros(r.shape[0], dtype=bool)
    excluded = np.asarray(excluded, dtype=bool).ravel()
    if excluded.shape != r.shape:
        raise ShapeError("excluded mask must match the score vector")
    rows = []
    for code in sorted(np.unique(atlas.labels).tolist()):
        in_net = atlas.labels == code
        scored = in_net & ~excluded
        vals = r[scored]
        rows.append({
            "code": int(code),
            "name": atlas.names[code],
            "n_voxels": int(in_net.sum()),
            "n_scored": int(scored.sum()),
            "mean_r": float(vals.mean()) if vals.size else float("nan"),
            "std_r": float(vals.std()) if vals.size else float("nan"),
        })
    return rows

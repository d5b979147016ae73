"""Declarative pipeline configuration with collect-everything validation.

A config file is JSON. Validation never stops at the first problem; every
unknown key, missing requirement, and out-of-range value is gathered and
reported in one ConfigError so a manifest can be fixed in a single pass.
tr_s has no default on purpose: a wrong repetition time silently corrupts
every downstream fit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .hrf import HrfParams
from .ridge import DEFAULT_LAMBDAS, RidgeConfig

_HRF_KEYS = {"peak_shape", "undershoot_shape", "peak_scale_s",
             "undershoot_scale_s", "undershoot_ratio", "length_s",
             "oversample_hz"}
_MODEL_KEYS = {"n_layers", "d_model", "n_heads", "vocab", "context",
               "d_ff"}
_TASK_KEYS = {"n_examples", "context_len", "n_classes"}
_TUNE_KEYS = {"steps", "lr", "batch_size"}
_PRETRAIN_KEYS = {"warmup_steps", "lr", "n_examples"}
_SWEEP_KEYS = {"proportions", "n_subjects", "n_voxels", "snr", "seed",
               "n_sentences", "onset_spacing_s", "duration_s", "model",
               "task", "tune", "pretrain"}
_TOP_KEYS = {"tr_s", "n_trs", "hrf", "lambdas", "penalty", "standardize",
             "fit_intercept", "folds", "scheme", "seed", "alpha", "fisher_z",
             "out", "sweep"}


@dataclass(frozen=True)
class SweepSettings:
    """Everything the tuned-proportion sweep needs, fully defaulted."""

    proportions: tuple = (0.25, 0.5, 0.75, 1.0)
    n_subjects: int = 4
    n_voxels: int = 60
    snr: tuple = (2.0, 1.0, 1.0, 1.0)
    seed: int = 0
    n_sentences: int = 48
    onset_spacing_s: float = 6.0
    duration_s: float = 2.0
    model: dict = field(default_factory=dict)
    task: dict = field(default_factory=dict)
    tune: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PipelineConfig:
    """Validated settings for every verb, with documented defaults filled."""

    tr_s: float
    n_trs: int = None
    hrf: HrfParams = field(default_factory=HrfParams)
    ridge: RidgeConfig = field(default_factory=RidgeConfig)
    folds: int = 5
    scheme: str = "contiguous"
    seed: int = 0
    alpha: float = 0.05
    fisher_z: bool = False
    out: str = None
    sweep: SweepSettings = field(default_factory=SweepSettings)
    raw: dict = field(default_factory=dict, repr=False)


def _expect_number(problems, raw, key, lo=None, hi=None, integral=False):
    v = raw.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        problems.append(f"{key} must be a number, got {v!r}")
        return None
    if integral and int(v) != v:
        problems.append(f"{key} must be an integer, got {v!r}")
        return None
    if lo is not None and v < lo:
        problems.append(f"{key} must be >= {lo}, got {v}")
        return None
    if hi is not None and v > hi:
        problems.append(f"{key} must be <= {hi}, got {v}")
        return None
    return int(v) if integral else float(v)


def _expect_bool(problems, raw, key):
    v = raw.get(key)
    if v is None:
        return None
    if not isinstance(v, bool):
        problems.append(f"{key} must be true or false, got {v!r}")
        return None
    return v


def _check_unknown(problems, raw, known, where):
    for key in sorted(set(raw) - known):
        problems.append(f"unknown key {key!r} in {where}")


def _subdict(problems, raw, key, known):
    sub = raw.get(key)
    if sub is None:
        return {}
    if not isinstance(sub, dict):
        problems.append(f"{key} must be an object, got {type(sub).__name__}")
        return {}
    _check_unknown(problems, sub, known, key)
    return {k: v for k, v in sub.items() if k in known}


def validate_mapping(raw):
    """Validate an already-parsed config dict; collects every problem."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a JSON object"])
    _check_unknown(problems, raw, _TOP_KEYS, "config")

    tr_s = _expect_number(problems, raw, "tr_s")
    if "tr_s" not in raw:
        problems.append("tr_s is required and never defaulted")
    elif tr_s is not None and tr_s <= 0:
        problems.append(f"tr_s must be positive, got {tr_s}")

    n_trs = _expect_number(problems, raw, "n_trs", lo=2, integral=True)

    hrf_raw = _subdict(problems, raw, "hrf", _HRF_KEYS)
    hrf = HrfParams()
    try:
        hrf = HrfParams(**hrf_raw)
    except Exception as exc:  # field-level problems surface individually
        problems.append(f"hrf: {exc}")

    lambdas = raw.get("lambdas")
    if lambdas is None:
        lambdas = DEFAULT_LAMBDAS.tolist()
    elif not isinstance(lambdas, list) or not lambdas or any(
            isinstance(v, bool) or not isinstance(v, (int, float))
            for v in lambdas):
        problems.append("lambdas must be a non-empty list of numbers")
        lambdas = DEFAULT_LAMBDAS.tolist()
    else:
        arr = np.asarray(lambdas, dtype=np.float64)
        if not np.isfinite(arr).all() or (arr < 0).any():
            problems.append("lambdas must be finite and non-negative")
        elif (np.diff(arr) <= 0).any():
            problems.append("lambdas must be sorted strictly ascending")

    penalty = raw.get("penalty", "l2")
    if penalty not in ("l2", "l1"):
        problems.append(f"penalty must be 'l2' or 'l1', got {penalty!r}")
        penalty = "l2"
    standardize = _expect_bool(problems, raw, "standardize")
    fit_intercept = _expect_bool(problems, raw, "fit_intercept")

    folds = _expect_number(problems, raw, "folds", lo=2, integral=True)
    scheme = raw.get("scheme", "contiguous")
    if scheme not in ("contiguous", "by_run"):
        problems.append(f"scheme must be 'contiguous' or 'by_run', got {scheme!r}")
        scheme = "contiguous"
    seed = _expect_number(problems, raw, "seed", integral=True)
    alpha = _expect_number(problems, raw, "alpha")
    if alpha is not None and not 0.0 < alpha < 1.0:
        problems.append(f"alpha must lie in (0, 1), got {alpha}")
        alpha = None
    fisher_z = _expect_bool(problems, raw, "fisher_z")
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        problems.append(f"out must be a path string, got {out!r}")
        out = None

    sweep = _validate_sweep(problems, raw.get("sweep"))

    if problems:
        raise ConfigError(problems)

    ridge = RidgeConfig(
        lambdas=np.asarray(lambdas, dtype=np.float64),
        penalty=penalty,
        standardize=True if standardize is None else standardize,
        fit_intercept=True if fit_intercept is None else fit_intercept,
    )
    return PipelineConfig(
        tr_s=tr_s,
        n_trs=n_trs,
        hrf=hrf,
        ridge=ridge,
        folds=5 if folds is None else folds,
        scheme=scheme,
        seed=0 if seed is None else seed,
        alpha=0.05 if alpha is None else alpha,
        fisher_z=False if fisher_z is None else fisher_z,
        out=out,
        sweep=sweep,
        raw=raw,
    )


def _validate_sweep(problems, raw):
    if raw is None:
        return SweepSettings()
    if not isinstance(raw, dict):
        problems.append(f"sweep must be an object, got {type(raw).__name__}")
        return SweepSettings()
    _check_unknown(problems, raw, _SWEEP_KEYS, "sweep")

    kwargs = {}
    props = raw.get("proportions")
    if props is not None:
        if not isinstance(props, list) or any(
                isinstance(p, bool) or not isinstance(p, (int, float))
                for p in props):
            problems.append("sweep.proportions must be a list of numbers")
        elif any(not 0.0 <= p <= 1.0 for p in props):
            problems.append("sweep.proportions must lie in [0, 1]")
        else:
            kwargs["proportions"] = tuple(float(p) for p in props)

    for key, lo in (("n_subjects", 1), ("n_voxels", 4), ("seed", None),
                    ("n_sentences", 2)):
        v = _expect_number(problems, raw, key, lo=lo, integral=True)
        if v is not None:
            kwargs[key] = v
    for key in ("onset_spacing_s", "duration_s"):
        v = _expect_number(problems, raw, key, lo=0.1)
        if v is not None:
            kwargs[key] = v

    snr = raw.get("snr")
    if snr is not None:
        values = snr if isinstance(snr, list) else [snr]
        if any(isinstance(v, bool) or not isinstance(v, (int, float))
               for v in values):
            problems.append("sweep.snr must be a number or list of numbers")
        elif isinstance(snr, list) and len(snr) != 4:
            problems.append(f"sweep.snr list needs 4 values, got {len(snr)}")
        elif any(v < 0 for v in values):
            problems.append("sweep.snr must be >= 0")
        else:
            kwargs["snr"] = tuple(float(v) for v in values) \
                if isinstance(snr, list) else (float(snr),) * 4

    for key, known in (("model", _MODEL_KEYS), ("task", _TASK_KEYS),
                       ("tune", _TUNE_KEYS), ("pretrain", _PRETRAIN_KEYS)):
        sub = _subdict(problems, raw, key, known)
        if sub:
            kwargs[key] = sub
    return SweepSettings(**kwargs)


def validate_config(path):
    """Load and validate a JSON config file into a PipelineConfig."""
    try:
        with open(path, "rb") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from None
    return validate_mapping(raw)

"""Three tuning regimes over the same loss: full, partial by layer
proportion, and prefix-only with frozen weights.

The optimizer is plain mini-batch SGD with a fixed step, single threaded, so
a seed pins the whole trajectory bit-for-bit. Partial tuning at proportion p
unfreezes the top ceil(p * n_layers) blocks plus the output matrix; p = 0
degenerates to head-only tuning and p = 1 additionally unfreezes both
embedding tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError, ValidationError
from .model import (
    PrefixBank,
    compute_loss,
    init_prefix,
    loss_and_grads,
    param_names,
)

MODES = ("full", "partial", "prefix")


@dataclass(frozen=True)
class TuneConfig:
    mode: str
    steps: int = 200
    lr: float = 0.1
    batch_size: int = 16
    seed: int = 0
    proportion: float = None
    prefix_len: int = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ValidationError("steps and batch_size must be >= 1")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.mode == "partial":
            if self.proportion is None or not 0.0 <= self.proportion <= 1.0:
                raise ValidationError(
                    "partial mode requires proportion in [0, 1], got "
                    f"{self.proportion}"
                )
            if self.prefix_len is not None:
                raise ValidationError("prefix_len is only valid in prefix mode")
        elif self.mode == "prefix":
            if self.prefix_len is None or self.prefix_len < 1:
                raise ValidationError(
                    f"prefix mode requires prefix_len >= 1, got {self.prefix_len}"
                )
            if self.proportion is not None:
                raise ValidationError("proportion is only valid in partial mode")
        else:
            if self.proportion is not None or self.prefix_len is not None:
                raise ValidationError(
                    "full mode takes neither proportion nor prefix_len"
                )


def select_trainable(model_cfg, mode, proportion=None):
    """Names of the parameter tensors a tuning mode is allowed to update."""
    names = param_names(model_cfg)
    if mode == "full":
        return set(names)
    if mode == "prefix":
        return set()
    if mode != "partial":
        raise ValidationError(f"unknown mode {mode!r}")
    if proportion is None or not 0.0 <= proportion <= 1.0:
        raise ValidationError(f"proportion must lie in [0, 1], got {proportion}")
    n = model_cfg.n_layers
    n_top = math.ceil(proportion * n)
    chosen = {"w_out"}
    for i in range(n - n_top, n):
        chosen.update(name for name in names if name.startswith(f"layers.{i}."))
    if proportion == 1.0:
        chosen.update(("tok_emb", "pos_emb"))
    return chosen


@dataclass(frozen=True)
class TuneResult:
    params: dict
    prefix: PrefixBank = None
    history: list = field(default_factory=list)
    mode: str = "full"


def _batch_stream(n_examples, batch_size, seed):
    """Deterministic epoch-shuffled index batches, refilled as needed."""
    rng = np.random.default_rng(seed)
    queue = []
    while True:
        while len(queue) < batch_size:
            queue.extend(rng.permutation(n_examples).tolist())
        yield np.asarray(queue[:batch_size])
        del queue[:batch_size]


def tune(params, model_cfg, ids, target_mask, tune_cfg):
    """Run the configured regime and return updated copies.

    The input `params` dict is never mutated; frozen tensors in the result
    are bit-identical copies of their inputs.
    """
    ids = np.asarray(ids)
    target_mask = np.asarray(target_mask, dtype=bool)
    if ids.ndim != 2 or ids.shape != target_mask.shape:
        raise ValidationError(
            f"ids {ids.shape} and target mask {target_mask.shape} must be "
            "matching 2-D arrays"
        )
    work = {name: p.copy() for name, p in params.items()}
    trainable = select_trainable(model_cfg, tune_cfg.mode, tune_cfg.proportion)
    prefix_m = None
    if tune_cfg.mode == "prefix":
        prefix_m = init_prefix(model_cfg, tune_cfg.prefix_len,
                               seed=tune_cfg.seed).m.copy()

    history = []
    batches = _batch_stream(ids.shape[0], tune_cfg.batch_size, tune_cfg.seed)
    for step in range(tune_cfg.steps):
        take = next(batches)
        loss, grads, pgrad = loss_and_grads(
            work, model_cfg, ids[take], target_mask[take],
            prefix=prefix_m, trainable=trainable,
        )
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}", step=step)
        for name in trainable:
            work[name] -= tune_cfg.lr * grads[name]
        if prefix_m is not None:
            prefix_m -= tune_cfg.lr * pgrad
        history.append(loss)
    return TuneResult(
        params=work,
        prefix=PrefixBank(prefix_m) if prefix_m is not None else None,
        history=history,
        mode=tune_cfg.mode,
    )


def grad_check(params, model_cfg, ids, target_mask, mode="full",
               proportion=None, prefix=None, step=1e-5, n_top=4, n_random=2,
               seed=0):
    """Central finite differences against analytic gradients.

    For each checked tensor, probes the entries with the largest analytic
    gradients plus a few random ones. Returns a dict of per-tensor maximum
    errors (absolute below 1e-6 magnitude, relative above).
    """
    trainable = select_trainable(model_cfg, mode, proportion)
    loss0, grads, pgrad = loss_and_grads(
        params, model_cfg, ids, target_mask, prefix=prefix,
        trainable=trainable,
    )
    rng = np.random.default_rng(seed)
    errors = {}

    def check_tensor(name, analytic, evaluate):
        flat = analytic.ravel()
        order = np.argsort(np.abs(flat))[::-1][:n_top].tolist()
        remaining = np.setdiff1d(np.arange(flat.size), order)
        if remaining.size and n_random:
            order.extend(rng.choice(remaining, size=min(n_random, remaining.size),
                                    replace=False).tolist())
        worst = 0.0
        for idx in order:
            lp = evaluate(idx, +step)
            lm = evaluate(idx, -step)
            fd = (lp - lm) / (2.0 * step)
            a = flat[idx]
            denom = max(abs(a), abs(fd))
            err = abs(a - fd) if denom < 1e-6 else abs(a - fd) / denom
            worst = max(worst, err)
        errors[name] = worst

    for name, analytic in grads.items():
        def evaluate(idx, delta, _name=name):
            work = dict(params)
            bumped = params[_name].copy()
            bumped.flat[idx] += delta
            work[_name] = bumped
            return compute_loss(work, model_cfg, ids, target_mask, prefix=prefix)
        check_tensor(name, analytic, evaluate)

    if prefix is not None and pgrad is not None:
        base_m = prefix.m if isinstance(prefix, PrefixBank) else np.asarray(prefix)

        def evaluate_prefix(idx, delta):
            bumped = base_m.copy()
            bumped.flat[idx] += delta
            return compute_loss(params, model_cfg, ids, target_mask,
                                prefix=bumped)
        check_tensor("prefix", pgrad, evaluate_prefix)
    return errors

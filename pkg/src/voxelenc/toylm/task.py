"""Synthetic tuning tasks framed as conditional next-token generation.

Classification avoids a separate head: the label rides at the end of the
sequence as a reserved token, and the loss covers only that continuation
position. The warm-up corpus has a planted bigram structure so a short
language-modeling phase produces a non-degenerate starting model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .model import init_params
from .tune import TuneConfig, tune

# token id 0 stays reserved; labels occupy 1..n_classes
LABEL_BASE = 1


@dataclass(frozen=True)
class TokenSequence:
    """Context ids x and continuation ids y; the model consumes z = [x; y]."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.int64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64))
        if self.x.ndim != 1 or self.y.ndim != 1:
            raise ValidationError("x and y must be 1-D id sequences")
        if self.y.size < 1:
            raise ValidationError("continuation y must hold at least one token")

    @property
    def z(self):
        return np.concatenate([self.x, self.y])

    @property
    def target_mask(self):
        mask = np.zeros(self.x.size + self.y.size, dtype=bool)
        mask[self.x.size:] = True
        return mask


def make_classification_data(cfg, n_examples, context_len=12, n_classes=4,
                             seed=0):
    """Label = (first + last context token) mod n_classes, as a token.

    Returns (ids, target_mask), each (n_examples, context_len + 1). Context
    tokens are drawn above the reserved label range.
    """
    if n_classes < 2 or LABEL_BASE + n_classes >= cfg.vocab:
        raise ValidationError(
            f"n_classes {n_classes} does not fit vocab {cfg.vocab}"
        )
    if context_len < 2:
        raise ValidationError("context_len must be >= 2")
    rng = np.random.default_rng(seed)
    lo = LABEL_BASE + n_classes
    x = rng.integers(lo, cfg.vocab, size=(n_examples, context_len))
    labels = (x[:, 0] + x[:, -1]) % n_classes
    ids = np.concatenate([x, (LABEL_BASE + labels)[:, None]], axis=1)
    mask = np.zeros_like(ids, dtype=bool)
    mask[:, -1] = True
    return ids.astype(np.int64), mask


def make_warmup_data(cfg, n_examples, seq_len=16, seed=0, stickiness=0.8):
    """Bigram-structured text: each token prefers the successor
    (7 * t + 3) mod vocab with probability `stickiness`."""
    rng = np.random.default_rng(seed)
    ids = np.empty((n_examples, seq_len), dtype=np.int64)
    ids[:, 0] = rng.integers(0, cfg.vocab, n_examples)
    for t in range(1, seq_len):
        preferred = (7 * ids[:, t - 1] + 3) % cfg.vocab
        random_tok = rng.integers(0, cfg.vocab, n_examples)
        ids[:, t] = np.where(rng.random(n_examples) < stickiness,
                             preferred, random_tok)
    mask = np.ones_like(ids, dtype=bool)
    mask[:, 0] = False
    return ids, mask


def make_pretrained(cfg, seed=0, warmup_steps=80, lr=0.05, n_examples=256):
    """Seeded init plus a short language-modeling warm-up on planted text."""
    params = init_params(cfg, seed=seed)
    ids, mask = make_warmup_data(cfg, n_examples, seed=seed + 1)
    result = tune(
        params, cfg, ids, mask,
        TuneConfig(mode="full", steps=warmup_steps, lr=lr, batch_size=32,
                   seed=seed + 2),
    )
    return result.params

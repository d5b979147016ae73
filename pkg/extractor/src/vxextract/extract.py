"""Mean-pooled last-layer sentence embeddings from a pretrained encoder."""

import sys

import numpy as np
import torch

from .manifest import ManifestError


class JobError(RuntimeError):
    """Model could not be loaded or produced unusable output."""


# sequences longer than the model can position-encode are split into windows
# this many content tokens wide (specials re-added per window)
_FALLBACK_MAX_LEN = 512


def load_model(name_or_path, device="cpu"):
    """Load tokenizer + base model in eval mode; failures become JobError."""
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(name_or_path)
        model = AutoModel.from_pretrained(name_or_path)
    except Exception as exc:
        raise JobError(f"cannot load model {name_or_path!r}: {exc}") from exc
    model.to(device)
    model.eval()
    return tokenizer, model


def _sequence_limit(tokenizer, model):
    limits = []
    if tokenizer.model_max_length and tokenizer.model_max_length < 1_000_000:
        limits.append(int(tokenizer.model_max_length))
    max_pos = getattr(model.config, "max_position_embeddings", None)
    if max_pos:
        limits.append(int(max_pos))
    return min(limits) if limits else _FALLBACK_MAX_LEN


def _structural_ids(tokenizer):
    ids = {tokenizer.pad_token_id, tokenizer.cls_token_id,
           tokenizer.sep_token_id, getattr(tokenizer, "bos_token_id", None),
           getattr(tokenizer, "eos_token_id", None)}
    ids.discard(None)
    return sorted(ids)


def _pool_batch(tokenizer, model, texts, device):
    """One forward pass; returns (sums, counts) per input text.

    Texts longer than the sequence limit are split by the tokenizer into
    as many windows as needed; every window's content tokens contribute to
    its sentence's mean. Positions holding padding or sentence-structure
    tokens (CLS/SEP/BOS/EOS/PAD) are excluded; unknown-word tokens still
    occupy real stimulus positions and are kept.
    """
    limit = _sequence_limit(tokenizer, model)
    enc = tokenizer(texts, padding=True, truncation=True, max_length=limit,
                    return_overflowing_tokens=True, return_tensors="pt")
    mapping = enc.pop("overflow_to_sample_mapping", None)
    if mapping is None:
        mapping = torch.arange(enc["input_ids"].shape[0])
    enc = {k: v.to(device) for k, v in enc.items()}

    n_rows = enc["input_ids"].shape[0]
    if n_rows > len(texts):
        split = np.bincount(mapping.numpy(), minlength=len(texts))
        for i in np.flatnonzero(split > 1):
            print(f"warning: sentence {i} exceeds the {limit}-token window, "
                  f"split into {split[i]} windows", file=sys.stderr)

    with torch.no_grad():
        hidden = model(**enc).last_hidden_state

    content = enc["attention_mask"].bool()
    for tid in _structural_ids(tokenizer):
        content &= enc["input_ids"] != tid

    dim = hidden.shape[-1]
    sums = torch.zeros(len(texts), dim, dtype=hidden.dtype)
    counts = torch.zeros(len(texts), dtype=torch.long)
    masked = (hidden * content.unsqueeze(-1)).sum(dim=1).cpu()
    sums.index_add_(0, mapping, masked)
    counts.index_add_(0, mapping, content.sum(dim=1).cpu())
    return sums, counts


def embed_sentences(tokenizer, model, texts, batch_size=8, device="cpu"):
    """Return one mean-pooled last-layer vector per text as float32 rows.

    Duplicate texts are computed once and share one vector, so repeats in a
    manifest are bit-identical regardless of how batches fall.
    """
    if batch_size < 1:
        raise ManifestError(f"batch_size must be >= 1, got {batch_size}")
    unique = list(dict.fromkeys(texts))
    vectors = {}
    for lo in range(0, len(unique), batch_size):
        chunk = unique[lo:lo + batch_size]
        sums, counts = _pool_batch(tokenizer, model, chunk, device)
        for text, s, c in zip(chunk, sums, counts):
            if c.item() == 0:
                raise JobError(
                    f"sentence {texts.index(text)} tokenizes to zero content "
                    "tokens; nothing to pool"
                )
            vectors[text] = (s / c.item()).numpy().astype(np.float32)
    out = np.stack([vectors[t] for t in texts])
    if not np.isfinite(out).all():
        raise JobError("model produced non-finite embeddings")
    return out

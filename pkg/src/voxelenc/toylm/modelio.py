"""Model checkpoints: one flat f64 matrix plus a JSON sidecar.

All tensors are flattened in canonical order into a single (1, total) row so
the numeric payload lives in the same container as every other matrix and
round-trips bit-exactly. The sidecar records the config and each tensor's
name and shape; a trained prefix rides along as a tensor named "prefix".
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..matrixio import read_matrix, write_matrix
from .model import PrefixBank, ToyLmConfig, param_names, param_shapes


def save_model(path, params, cfg, prefix=None, extra=None):
    """Write params (+ optional prefix bank) to `path` and a .json sidecar."""
    path = Path(path)
    names = param_names(cfg)
    missing = [n for n in names if n not in params]
    if missing:
        raise ValidationError(f"params missing tensors: {missing[:4]}")
    tensors = [(name, np.asarray(params[name], dtype=np.float64))
               for name in names]
    if prefix is not None:
        m = prefix.m if isinstance(prefix, PrefixBank) else np.asarray(prefix)
        tensors.append(("prefix", np.asarray(m, dtype=np.float64)))
    flat = np.concatenate([t.ravel(order="C") for _, t in tensors])
    write_matrix(flat[None, :], path)

    meta = {
        "kind": "toylm",
        "config": asdict(cfg),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    if extra:
        meta.update(extra)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_model(path):
    """Read a checkpoint back, returning (params, cfg, prefix-or-None)."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("kind") != "toylm":
        raise ValidationError(f"{path}: sidecar kind {meta.get('kind')!r} "
                              "is not a model checkpoint")
    cfg = ToyLmConfig(**meta["config"])
    flat = read_matrix(path).ravel()

    expected_shapes = param_shapes(cfg)
    params = {}
    prefix = None
    offset = 0
    for entry in meta["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        if offset + size > flat.size:
            raise ValidationError(f"{path}: payload too short at tensor {name}")
        block = flat[offset:offset + size].reshape(shape)
        offset += size
        if name == "prefix":
            prefix = PrefixBank(block)
            continue
        if name not in expected_shapes:
            raise ValidationError(f"{path}: unexpected tensor {name!r}")
        if shape != expected_shapes[name]:
            raise ValidationError(
                f"{path}: tensor {name} has shape {shape}, config implies "
                f"{expected_shapes[name]}"
            )
        params[name] = block.copy()
    if offset != flat.size:
        raise ValidationError(
            f"{path}: {flat.size - offset} trailing values after all tensors"
        )
    missing = [n for n in param_names(cfg) if n not in params]
    if missing:
        raise ValidationError(f"{path}: checkpoint lacks tensors {missing[:4]}")
    return params, cfg, prefix

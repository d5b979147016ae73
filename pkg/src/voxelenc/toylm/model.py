"""Desk-scale decoder-only transformer in plain numpy, float64 throughout.

Blocks are post-norm: a = LN1(x + attention(x)), out = LN2(a + mlp(a)), with
exact erf GELU and causal attention. Small enough that analytic gradients can
be audited against central finite differences at 1e-5 steps.

Prefix tuning feeds a trainable matrix M of shape (prefix_len, n_layers *
d_model): before layer j runs, the first prefix_len rows of its input are
replaced by M's j-th d_model slice. Prefix rows carry no position ids, are
attended to by every later position, and never appear in outputs or loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ..errors import ShapeError, ValidationError

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ToyLmConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    vocab: int = 512
    context: int = 128
    d_ff: int = 256

    def __post_init__(self):
        if min(self.n_layers, self.d_model, self.n_heads, self.vocab,
               self.context, self.d_ff) < 1:
            raise ValidationError("all model dimensions must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValidationError(
                f"d_model {self.d_model} not divisible by {self.n_heads} heads"
            )

    @property
    def head_dim(self):
        return self.d_model // self.n_heads


def param_names(cfg):
    """Canonical tensor order; serialization and flattening both follow it."""
    names = ["tok_emb", "pos_emb"]
    for i in range(cfg.n_layers):
        base = f"layers.{i}"
        names += [f"{base}.attn.{w}" for w in
                  ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o")]
        names += [f"{base}.ln1.gamma", f"{base}.ln1.beta"]
        names += [f"{base}.mlp.{w}" for w in ("w1", "b1", "w2", "b2")]
        names += [f"{base}.ln2.gamma", f"{base}.ln2.beta"]
    names.append("w_out")
    return names


def param_shapes(cfg):
    d, ff, v = cfg.d_model, cfg.d_ff, cfg.vocab
    shapes = {"tok_emb": (v, d), "pos_emb": (cfg.context, d), "w_out": (d, v)}
    for i in range(cfg.n_layers):
        base = f"layers.{i}"
        for w in ("w_q", "w_k", "w_v", "w_o"):
            shapes[f"{base}.attn.{w}"] = (d, d)
        for b in ("b_q", "b_k", "b_v", "b_o"):
            shapes[f"{base}.attn.{b}"] = (d,)
        shapes[f"{base}.ln1.gamma"] = (d,)
        shapes[f"{base}.ln1.beta"] = (d,)
        shapes[f"{base}.mlp.w1"] = (d, ff)
        shapes[f"{base}.mlp.b1"] = (ff,)
        shapes[f"{base}.mlp.w2"] = (ff, d)
        shapes[f"{base}.mlp.b2"] = (d,)
        shapes[f"{base}.ln2.gamma"] = (d,)
        shapes[f"{base}.ln2.beta"] = (d,)
    return shapes


def init_params(cfg, seed=0, scale=0.02):
    """Gaussian weights, zero biases, identity layer norms."""
    rng = np.random.default_rng(seed)
    params = {}
    for name in param_names(cfg):
        shape = param_shapes(cfg)[name]
        if name.endswith((".gamma",)):
            params[name] = np.ones(shape)
        elif name.endswith((".beta", "b_q", "b_k", "b_v", "b_o", "b1", "b2")):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, scale, shape)
    return params


@dataclass(frozen=True)
class PrefixBank:
    """Trainable per-layer prefix activations, one d_model slice per layer."""

    m: np.ndarray  # (prefix_len, n_layers * d_model)

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        object.__setattr__(self, "m", m)
        if m.ndim != 2 or m.shape[0] < 1:
            raise ValidationError(
                f"prefix bank must be (prefix_len >= 1, n_layers * d_model), got {m.shape}"
            )
        if not np.isfinite(m).all():
            raise ValidationError("prefix bank must be finite")

    @property
    def prefix_len(self):
        return self.m.shape[0]


def init_prefix(cfg, prefix_len, seed=0, scale=0.02):
    rng = np.random.default_rng(seed)
    return PrefixBank(rng.normal(0.0, scale, (prefix_len, cfg.n_layers * cfg.d_model)))


def _prefix_matrix(cfg, prefix):
    if prefix is None:
        return np.zeros((0, cfg.n_layers * cfg.d_model))
    m = prefix.m if isinstance(prefix, PrefixBank) else np.asarray(prefix, np.float64)
    if m.ndim != 2 or m.shape[1] != cfg.n_layers * cfg.d_model:
        raise ShapeError(
            f"prefix shape {m.shape} does not match "
            f"(*, {cfg.n_layers * cfg.d_model})"
        )
    return m


def _gelu(u):
    return 0.5 * u * (1.0 + erf(u * _INV_SQRT2))


def _gelu_grad(u):
    # the density term vanishes for huge |u|; overflow in u*u is benign there
    with np.errstate(over="ignore"):
        return 0.5 * (1.0 + erf(u * _INV_SQRT2)) \
            + u * np.exp(-0.5 * u * u) * _INV_SQRT_2PI


def _ln_forward(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma)


def _ln_backward(dout, cache):
    xhat, inv_std, gamma = cache
    dgamma = np.sum(dout * xhat, axis=tuple(range(dout.ndim - 1)))
    dbeta = np.sum(dout, axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * gamma
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _split_heads(x, cfg):
    b, s, _ = x.shape
    return x.reshape(b, s, cfg.n_heads, cfg.head_dim).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dh)


def _check_ids(cfg, ids, n_prefix):
    ids = np.asarray(ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2 or ids.shape[1] < 1:
        raise ShapeError(f"token ids must be (batch, seq >= 1), got {ids.shape}")
    if ids.min() < 0 or ids.max() >= cfg.vocab:
        raise ValidationError(
            f"token ids must lie in [0, {cfg.vocab}), got "
            f"[{ids.min()}, {ids.max()}]"
        )
    if n_prefix + ids.shape[1] > cfg.context:
        raise ValidationError(
            f"prefix {n_prefix} + sequence {ids.shape[1]} exceeds "
            f"context {cfg.context}"
        )
    return ids.astype(np.int64)


def _forward(params, cfg, ids, prefix_m):
    """Full pass with caches for backprop. Returns (logits, final_h, caches)."""
    n_p = prefix_m.shape[0]
    ids = _check_ids(cfg, ids, n_p)
    b, t = ids.shape
    s = n_p + t
    d = cfg.d_model

    h = np.empty((b, s, d))
    if n_p:
        h[:, :n_p] = prefix_m[:, :d]
    h[:, n_p:] = params["tok_emb"][ids] + params["pos_emb"][:t]

    mask = np.triu(np.full((s, s), -np.inf), k=1)
    layer_caches = []
    for i in range(cfg.n_layers):
        base = f"layers.{i}"
        if i > 0 and n_p:
            h = h.copy()
            h[:, :n_p] = prefix_m[:, i * d:(i + 1) * d]
        q = h @ params[f"{base}.attn.w_q"] + params[f"{base}.attn.b_q"]
        k = h @ params[f"{base}.attn.w_k"] + params[f"{base}.attn.b_k"]
        v = h @ params[f"{base}.attn.w_v"] + params[f"{base}.attn.b_v"]
        qh, kh, vh = (_split_heads(x, cfg) for x in (q, k, v))
        scores = qh @ kh.swapaxes(-1, -2) / np.sqrt(cfg.head_dim) + mask
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        att = e / e.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(att @ vh)
        att_out = ctx @ params[f"{base}.attn.w_o"] + params[f"{base}.attn.b_o"]
        resid1 = h + att_out
        a, ln1_cache = _ln_forward(
            resid1, params[f"{base}.ln1.gamma"], params[f"{base}.ln1.beta"]
        )
        u = a @ params[f"{base}.mlp.w1"] + params[f"{base}.mlp.b1"]
        g = _gelu(u)
        m_out = g @ params[f"{base}.mlp.w2"] + params[f"{base}.mlp.b2"]
        out, ln2_cache = _ln_forward(
            a + m_out, params[f"{base}.ln2.gamma"], params[f"{base}.ln2.beta"]
        )
        layer_caches.append(
            dict(h_in=h, qh=qh, kh=kh, vh=vh, att=att, ctx=ctx,
                 ln1=ln1_cache, a=a, u=u, g=g, ln2=ln2_cache)
        )
        h = out

    logits = h[:, n_p:] @ params["w_out"]
    return logits, h, dict(ids=ids, n_p=n_p, layers=layer_caches)


def forward(params, cfg, ids, prefix=None):
    """Next-token probability rows, (batch, seq, vocab)."""
    prefix_m = _prefix_matrix(cfg, prefix)
    logits, _, _ = _forward(params, cfg, ids, prefix_m)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def final_hidden(params, cfg, ids, prefix=None):
    """Final-layer hidden states at real (non-prefix) positions."""
    prefix_m = _prefix_matrix(cfg, prefix)
    _, h, cache = _forward(params, cfg, ids, prefix_m)
    return h[:, cache["n_p"]:]


def embed_sequence(params, cfg, ids, prefix=None):
    """Mean of final-layer hidden states over real (non-prefix) positions."""
    return final_hidden(params, cfg, ids, prefix=prefix).mean(axis=1)


def compute_loss(params, cfg, ids, target_mask, prefix=None):
    """Mean next-token NLL over masked positions, no gradients."""
    prefix_m = _prefix_matrix(cfg, prefix)
    logits, _, cache = _forward(params, cfg, ids, prefix_m)
    ids = cache["ids"]
    target_mask = _check_target_mask(ids, target_mask)
    sel_b, sel_i = np.nonzero(target_mask)
    rows = logits[sel_b, sel_i - 1]
    targets = ids[sel_b, sel_i]
    z = rows - rows.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1))
    return float(np.mean(log_norm - z[np.arange(rows.shape[0]), targets]))


def _check_target_mask(ids, target_mask):
    target_mask = np.asarray(target_mask, dtype=bool)
    if target_mask.ndim == 1:
        target_mask = target_mask[None, :]
    if target_mask.shape != ids.shape:
        raise ShapeError(
            f"target mask {target_mask.shape} does not match ids {ids.shape}"
        )
    if target_mask[:, 0].any():
        raise ValidationError(
            "position 0 has no preceding logit row and cannot be a target"
        )
    if not target_mask.any():
        raise ValidationError("target mask selects no positions")
    return target_mask


def loss_and_grads(params, cfg, ids, target_mask, prefix=None, trainable=None):
    """Mean next-token NLL over masked positions, with analytic gradients.

    Returns (loss, grads, prefix_grad). `trainable` filters which parameter
    gradients appear in `grads` (None keeps all); prefix_grad is None when no
    prefix is given. target_mask marks the tokens being predicted, each read
    from the logit row one position earlier.
    """
    prefix_m = _prefix_matrix(cfg, prefix)
    logits, h_final, cache = _forward(params, cfg, ids, prefix_m)
    ids = cache["ids"]
    n_p = cache["n_p"]
    b, t = ids.shape
    d = cfg.d_model
    target_mask = _check_target_mask(ids, target_mask)

    sel_b, sel_i = np.nonzero(target_mask)
    rows = logits[sel_b, sel_i - 1]  # (n_pos, vocab)
    targets = ids[sel_b, sel_i]
    zmax = rows.max(axis=-1, keepdims=True)
    z = rows - zmax
    log_norm = np.log(np.exp(z).sum(axis=-1))
    n_pos = rows.shape[0]
    loss = float(np.mean(log_norm - z[np.arange(n_pos), targets]))

    dlogits = np.zeros_like(logits)
    soft = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    soft[np.arange(n_pos), targets] -= 1.0
    dlogits[sel_b, sel_i - 1] = soft / n_pos

    grads = {name: np.zeros_like(p) for name, p in params.items()}
    dprefix = np.zeros_like(prefix_m)

    flat_h = h_final[:, n_p:].reshape(-1, d)
    grads["w_out"] = flat_h.T @ dlogits.reshape(-1, cfg.vocab)
    dh = np.zeros_like(h_final)
    dh[:, n_p:] = dlogits @ params["w_out"].T

    inv_sqrt_dh = 1.0 / np.sqrt(cfg.head_dim)
    for i in reversed(range(cfg.n_layers)):
        base = f"layers.{i}"
        c = cache["layers"][i]
        d_resid2, dg2, db2 = _ln_backward(dh, c["ln2"])
        grads[f"{base}.ln2.gamma"] += dg2
        grads[f"{base}.ln2.beta"] += db2
        da = d_resid2.copy()
        dmlp_out = d_resid2
        grads[f"{base}.mlp.w2"] += c["g"].reshape(-1, cfg.d_ff).T @ \
            dmlp_out.reshape(-1, d)
        grads[f"{base}.mlp.b2"] += dmlp_out.sum(axis=(0, 1))
        dgelu = dmlp_out @ params[f"{base}.mlp.w2"].T
        du = dgelu * _gelu_grad(c["u"])
        grads[f"{base}.mlp.w1"] += c["a"].reshape(-1, d).T @ \
            du.reshape(-1, cfg.d_ff)
        grads[f"{base}.mlp.b1"] += du.sum(axis=(0, 1))
        da += du @ params[f"{base}.mlp.w1"].T

        d_resid1, dg1, db1 = _ln_backward(da, c["ln1"])
        grads[f"{base}.ln1.gamma"] += dg1
        grads[f"{base}.ln1.beta"] += db1
        dh_in = d_resid1.copy()
        datt_out = d_resid1

        grads[f"{base}.attn.w_o"] += c["ctx"].reshape(-1, d).T @ \
            datt_out.reshape(-1, d)
        grads[f"{base}.attn.b_o"] += datt_out.sum(axis=(0, 1))
        dctx = _split_heads(datt_out @ params[f"{base}.attn.w_o"].T, cfg)

        datt = dctx @ c["vh"].swapaxes(-1, -2)
        dvh = c["att"].swapaxes(-1, -2) @ dctx
        dscores = c["att"] * (datt - (datt * c["att"]).sum(axis=-1, keepdims=True))
        dqh = dscores @ c["kh"] * inv_sqrt_dh
        dkh = dscores.swapaxes(-1, -2) @ c["qh"] * inv_sqrt_dh

        dq, dk, dv = (_merge_heads(x) for x in (dqh, dkh, dvh))
        h_in_flat = c["h_in"].reshape(-1, d)
        for mat, dmat, bias in (("w_q", dq, "b_q"), ("w_k", dk, "b_k"),
                                ("w_v", dv, "b_v")):
            grads[f"{base}.attn.{mat}"] += h_in_flat.T @ dmat.reshape(-1, d)
            grads[f"{base}.attn.{bias}"] += dmat.sum(axis=(0, 1))
            dh_in += dmat @ params[f"{base}.attn.{mat}"].T

        if n_p:
            dprefix[:, i * d:(i + 1) * d] = dh_in[:, :n_p].sum(axis=0)
            dh_in[:, :n_p] = 0.0  # rows below are overwritten, grads stop here
        dh = dh_in

    d_embed = dh[:, n_p:]
    np.add.at(grads["tok_emb"], ids, d_embed)
    grads["pos_emb"][:t] += d_embed.sum(axis=0)

    if trainable is not None:
        grads = {name: g for name, g in grads.items() if name in trainable}
    prefix_grad = dprefix if prefix is not None else None
    return loss, grads, prefix_grad

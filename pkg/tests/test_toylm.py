"""Transformer semantics against a loop-based reference, finite-difference
gradient checks, tuning-regime contracts, and checkpoint round trips."""

import math

import numpy as np
import pytest

from voxelenc import TrainingError, ValidationError
from voxelenc.toylm import (
    PrefixBank,
    ToyLmConfig,
    TuneConfig,
    compute_loss,
    embed_sequence,
    final_hidden,
    forward,
    grad_check,
    init_params,
    init_prefix,
    load_model,
    loss_and_grads,
    make_classification_data,
    make_pretrained,
    make_warmup_data,
    param_names,
    param_shapes,
    save_model,
    select_trainable,
    tune,
)

TINY = ToyLmConfig(n_layers=2, d_model=8, n_heads=2, vocab=12, context=16,
                   d_ff=10)
SMALL = ToyLmConfig(n_layers=2, d_model=16, n_heads=2, vocab=40, context=32,
                    d_ff=24)


def reference_forward(params, cfg, ids_row, prefix_m=None):
    """Pure-Python per-element recomputation of the forward pass.

    Independent of the vectorized path: explicit loops, math.erf, math.exp.
    Returns (probs rows, final hidden rows) for one sequence.
    """
    P = 0 if prefix_m is None else len(prefix_m)
    T = len(ids_row)
    S = P + T
    d, H = cfg.d_model, cfg.n_heads
    dh = d // H
    eps = 1e-5

    h = [[0.0] * d for _ in range(S)]
    for r in range(P):
        for c in range(d):
            h[r][c] = float(prefix_m[r][c])
    for t in range(T):
        for c in range(d):
            h[P + t][c] = float(params["tok_emb"][ids_row[t], c]
                                + params["pos_emb"][t, c])

    def matvec(row, w, b):
        return [sum(row[i] * float(w[i, j]) for i in range(len(row)))
                + float(b[j]) for j in range(w.shape[1])]

    def layer_norm(row, gamma, beta):
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        inv = 1.0 / math.sqrt(var + eps)
        return [float(gamma[j]) * (row[j] - mu) * inv + float(beta[j])
                for j in range(len(row))]

    for layer in range(cfg.n_layers):
        base = f"layers.{layer}"
        if layer > 0 and P:
            for r in range(P):
                for c in range(d):
                    h[r][c] = float(prefix_m[r][layer * d + c])
        q = [matvec(h[r], params[f"{base}.attn.w_q"], params[f"{base}.attn.b_q"])
             for r in range(S)]
        k = [matvec(h[r], params[f"{base}.attn.w_k"], params[f"{base}.attn.b_k"])
             for r in range(S)]
        v = [matvec(h[r], params[f"{base}.attn.w_v"], params[f"{base}.attn.b_v"])
             for r in range(S)]
        ctx = [[0.0] * d for _ in range(S)]
        for head in range(H):
            lo = head * dh
            for i in range(S):
                scores = []
                for j in range(i + 1):
                    dot = sum(q[i][lo + a] * k[j][lo + a] for a in range(dh))
                    scores.append(dot / math.sqrt(dh))
                mx = max(scores)
                exps = [math.exp(s - mx) for s in scores]
                tot = sum(exps)
                for j in range(i + 1):
                    w = exps[j] / tot
                    for a in range(dh):
                        ctx[i][lo + a] += w * v[j][lo + a]
        new_h = []
        for r in range(S):
            att_out = matvec(ctx[r], params[f"{base}.attn.w_o"],
                             params[f"{base}.attn.b_o"])
            resid1 = [h[r][c] + att_out[c] for c in range(d)]
            a_row = layer_norm(resid1, params[f"{base}.ln1.gamma"],
                               params[f"{base}.ln1.beta"])
            u = matvec(a_row, params[f"{base}.mlp.w1"], params[f"{base}.mlp.b1"])
            g = [0.5 * uu * (1.0 + math.erf(uu / math.sqrt(2.0))) for uu in u]
            m_row = matvec(g, params[f"{base}.mlp.w2"], params[f"{base}.mlp.b2"])
            resid2 = [a_row[c] + m_row[c] for c in range(d)]
            new_h.append(layer_norm(resid2, params[f"{base}.ln2.gamma"],
                                    params[f"{base}.ln2.beta"]))
        h = new_h

    probs = []
    for t in range(T):
        logits = [sum(h[P + t][c] * float(params["w_out"][c, j])
                      for c in range(d)) for j in range(cfg.vocab)]
        mx = max(logits)
        exps = [math.exp(x - mx) for x in logits]
        tot = sum(exps)
        probs.append([e / tot for e in exps])
    return np.array(probs), np.array(h[P:])


class TestForwardSemantics:
    def test_matches_loop_reference(self):
        params = init_params(TINY, seed=1)
        rng = np.random.default_rng(2)
        ids = rng.integers(0, TINY.vocab, 6)
        want_probs, want_h = reference_forward(params, TINY, ids.tolist())
        got_probs = forward(params, TINY, ids)[0]
        got_h = final_hidden(params, TINY, ids)[0]
        assert np.max(np.abs(got_probs - want_probs)) < 1e-10
        assert np.max(np.abs(got_h - want_h)) < 1e-10

    def test_matches_loop_reference_with_prefix(self):
        params = init_params(TINY, seed=3)
        rng = np.random.default_rng(4)
        ids = rng.integers(0, TINY.vocab, 5)
        prefix = init_prefix(TINY, 3, seed=5)
        want_probs, want_h = reference_forward(
            params, TINY, ids.tolist(), prefix.m.tolist()
        )
        got_probs = forward(params, TINY, ids, prefix=prefix)[0]
        got_h = final_hidden(params, TINY, ids, prefix=prefix)[0]
        assert np.max(np.abs(got_probs - want_probs)) < 1e-10
        assert np.max(np.abs(got_h - want_h)) < 1e-10

    def test_loss_matches_reference_nll(self):
        params = init_params(TINY, seed=6)
        rng = np.random.default_rng(7)
        ids = rng.integers(0, TINY.vocab, (1, 6))
        mask = np.zeros((1, 6), dtype=bool)
        mask[0, [2, 5]] = True
        probs, _ = reference_forward(params, TINY, ids[0].tolist())
        want = -(math.log(probs[1][ids[0, 2]]) + math.log(probs[4][ids[0, 5]])) / 2
        assert compute_loss(params, TINY, ids, mask) == pytest.approx(want, abs=1e-12)

    def test_causality(self):
        params = init_params(SMALL, seed=8)
        rng = np.random.default_rng(9)
        ids = rng.integers(0, SMALL.vocab, 10)
        base = forward(params, SMALL, ids)[0]
        for t in (3, 7, 9):
            mutated = ids.copy()
            mutated[t] = (mutated[t] + 11) % SMALL.vocab
            out = forward(params, SMALL, mutated)[0]
            np.testing.assert_array_equal(out[:t], base[:t])
            assert np.max(np.abs(out[t] - base[t])) > 0

    def test_empty_prefix_is_identity(self):
        params = init_params(SMALL, seed=10)
        ids = np.arange(8) % SMALL.vocab
        plain = forward(params, SMALL, ids)
        empty = forward(params, SMALL, ids,
                        prefix=np.zeros((0, SMALL.n_layers * SMALL.d_model)))
        np.testing.assert_array_equal(plain, empty)

    def test_prefix_actually_propagates(self):
        params = init_params(SMALL, seed=11)
        ids = np.arange(6) + 5
        plain = embed_sequence(params, SMALL, ids)
        prefixed = embed_sequence(params, SMALL, ids,
                                  prefix=init_prefix(SMALL, 4, seed=12))
        assert np.linalg.norm(plain - prefixed) > 0

    def test_validation(self):
        params = init_params(TINY, seed=0)
        with pytest.raises(ValidationError, match="ids"):
            forward(params, TINY, np.array([0, TINY.vocab]))
        with pytest.raises(ValidationError, match="context"):
            forward(params, TINY, np.zeros(TINY.context + 1, dtype=int))
        with pytest.raises(ValidationError, match="context"):
            forward(params, TINY, np.zeros(TINY.context - 1, dtype=int),
                    prefix=init_prefix(TINY, 2))
        ids = np.zeros((1, 4), dtype=int)
        bad = np.zeros((1, 4), dtype=bool)
        bad[0, 0] = True
        with pytest.raises(ValidationError, match="position 0"):
            compute_loss(params, TINY, ids, bad)
        with pytest.raises(ValidationError, match="no positions"):
            compute_loss(params, TINY, ids, np.zeros((1, 4), dtype=bool))

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            ToyLmConfig(d_model=10, n_heads=4)
        with pytest.raises(ValidationError):
            ToyLmConfig(n_layers=0)


class TestEmbedding:
    def test_single_token_equals_final_state(self):
        params = init_params(SMALL, seed=13)
        ids = np.array([7])
        emb = embed_sequence(params, SMALL, ids)
        states = final_hidden(params, SMALL, ids)
        np.testing.assert_array_equal(emb, states[:, 0])

    def test_mean_pooling_definition(self):
        params = init_params(SMALL, seed=14)
        rng = np.random.default_rng(15)
        ids = rng.integers(0, SMALL.vocab, (3, 9))
        emb = embed_sequence(params, SMALL, ids)
        states = final_hidden(params, SMALL, ids)
        assert np.max(np.abs(emb - states.mean(axis=1))) < 1e-12


class TestGradients:
    def test_full_mode_fd(self):
        params = init_params(SMALL, seed=16)
        ids, mask = make_classification_data(SMALL, 4, context_len=6, seed=17)
        errs = grad_check(params, SMALL, ids, mask, mode="full")
        assert set(errs) == set(param_names(SMALL))
        assert max(errs.values()) < 1e-4

    def test_partial_mode_fd_checks_only_selected(self):
        params = init_params(SMALL, seed=18)
        ids, mask = make_classification_data(SMALL, 4, context_len=6, seed=19)
        errs = grad_check(params, SMALL, ids, mask, mode="partial",
                          proportion=0.5)
        assert set(errs) == select_trainable(SMALL, "partial", 0.5)
        assert max(errs.values()) < 1e-4

    def test_prefix_mode_fd_and_phi_absent(self):
        params = init_params(SMALL, seed=20)
        ids, mask = make_classification_data(SMALL, 4, context_len=6, seed=21)
        prefix = init_prefix(SMALL, 3, seed=22)
        errs = grad_check(params, SMALL, ids, mask, mode="prefix",
                          prefix=prefix)
        assert set(errs) == {"prefix"}
        assert errs["prefix"] < 1e-4

    def test_zero_loss_construction_is_stationary(self):
        cfg = TINY
        params = {n: np.zeros(param_shapes(cfg)[n]) for n in param_names(cfg)}
        for i in range(cfg.n_layers):
            params[f"layers.{i}.ln1.gamma"] = np.zeros(cfg.d_model)
            params[f"layers.{i}.ln2.gamma"] = np.zeros(cfg.d_model)
        last = f"layers.{cfg.n_layers - 1}"
        params[f"{last}.ln2.beta"] = np.ones(cfg.d_model)
        target = 3
        w_out = np.zeros((cfg.d_model, cfg.vocab))
        w_out[:, target] = 50.0 / cfg.d_model
        params["w_out"] = w_out
        ids = np.full((2, 5), target, dtype=np.int64)
        mask = np.zeros((2, 5), dtype=bool)
        mask[:, -1] = True
        loss, grads, _ = loss_and_grads(params, cfg, ids, mask)
        assert loss < 1e-8
        assert max(np.linalg.norm(g) for g in grads.values()) < 1e-6


class TestSelectTrainable:
    def expected_layer_names(self, cfg, idx):
        return {n for n in param_names(cfg) if n.startswith(f"layers.{idx}.")}

    def test_boundaries_and_ceiling(self):
        cfg = ToyLmConfig()  # 4 layers
        assert select_trainable(cfg, "partial", 0.0) == {"w_out"}
        quarter = select_trainable(cfg, "partial", 0.25)
        assert quarter == {"w_out"} | self.expected_layer_names(cfg, 3)
        half = select_trainable(cfg, "partial", 0.5)
        assert half == {"w_out"} | self.expected_layer_names(cfg, 2) \
            | self.expected_layer_names(cfg, 3)
        three_q = select_trainable(cfg, "partial", 0.75)
        assert three_q == {"w_out"} | set().union(
            *(self.expected_layer_names(cfg, i) for i in (1, 2, 3))
        )
        assert select_trainable(cfg, "partial", 1.0) == set(param_names(cfg))
        # ceiling: any p in (0, 0.25] unfreezes exactly one layer
        assert select_trainable(cfg, "partial", 0.01) == quarter

    def test_full_and_prefix(self):
        cfg = ToyLmConfig()
        assert select_trainable(cfg, "full") == set(param_names(cfg))
        assert select_trainable(cfg, "prefix") == set()

    def test_trainable_parameter_counts_monotone(self):
        cfg = ToyLmConfig()
        shapes = param_shapes(cfg)
        counts = []
        for p in (0.0, 0.25, 0.5, 0.75, 1.0):
            names = select_trainable(cfg, "partial", p)
            counts.append(sum(int(np.prod(shapes[n])) for n in names))
        assert counts == sorted(counts)
        assert counts[0] == int(np.prod(shapes["w_out"]))
        assert counts[-1] == sum(int(np.prod(s)) for s in shapes.values())


class TestTune:
    def make_task(self, n=64, seed=30):
        return make_classification_data(SMALL, n, context_len=6, seed=seed)

    def test_loss_decreases_smoothed(self):
        params = init_params(SMALL, seed=31)
        ids, mask = self.make_task()
        res = tune(params, SMALL, ids, mask,
                   TuneConfig(mode="full", steps=15, lr=0.2, batch_size=16,
                              seed=32))
        smoothed = np.convolve(res.history, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(smoothed[:6]) <= 1e-9)

    def test_full_mode_reduces_loss(self):
        params = init_params(SMALL, seed=33)
        ids, mask = self.make_task()
        res = tune(params, SMALL, ids, mask,
                   TuneConfig(mode="full", steps=120, lr=0.3, batch_size=32,
                              seed=34))
        assert np.mean(res.history[-10:]) < 0.5 * res.history[0]

    def test_prefix_mode_freezes_phi_bit_exact(self):
        params = make_pretrained(SMALL, seed=35, warmup_steps=20)
        ids, mask = self.make_task()
        res = tune(params, SMALL, ids, mask,
                   TuneConfig(mode="prefix", steps=40, lr=0.3, batch_size=16,
                              seed=36, prefix_len=4))
        for name in param_names(SMALL):
            assert res.params[name].tobytes() == params[name].tobytes(), name
        assert res.prefix is not None and res.prefix.prefix_len == 4
        # and the prefix must have moved off its init
        assert not np.array_equal(res.prefix.m, init_prefix(SMALL, 4, seed=36).m)

    def test_partial_mode_freezes_unselected(self):
        params = init_params(SMALL, seed=37)
        ids, mask = self.make_task()
        res = tune(params, SMALL, ids, mask,
                   TuneConfig(mode="partial", steps=25, lr=0.2, batch_size=16,
                              seed=38, proportion=0.5))
        selected = select_trainable(SMALL, "partial", 0.5)
        for name in param_names(SMALL):
            same = res.params[name].tobytes() == params[name].tobytes()
            assert same == (name not in selected), name

    def test_determinism(self):
        params = init_params(SMALL, seed=39)
        ids, mask = self.make_task()
        cfg = TuneConfig(mode="full", steps=20, lr=0.2, batch_size=8, seed=40)
        a = tune(params, SMALL, ids, mask, cfg)
        b = tune(params, SMALL, ids, mask, cfg)
        assert a.history == b.history
        for name in param_names(SMALL):
            assert a.params[name].tobytes() == b.params[name].tobytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises_training_error(self):
        params = init_params(SMALL, seed=41)
        ids, mask = self.make_task()
        with pytest.raises(TrainingError) as err:
            tune(params, SMALL, ids, mask,
                 TuneConfig(mode="full", steps=200, lr=1e6, batch_size=16,
                            seed=42))
        assert err.value.step >= 0

    def test_tune_config_validation(self):
        with pytest.raises(ValidationError):
            TuneConfig(mode="lora")
        with pytest.raises(ValidationError):
            TuneConfig(mode="partial")
        with pytest.raises(ValidationError):
            TuneConfig(mode="partial", proportion=1.5)
        with pytest.raises(ValidationError):
            TuneConfig(mode="prefix")
        with pytest.raises(ValidationError):
            TuneConfig(mode="prefix", prefix_len=4, proportion=0.5)
        with pytest.raises(ValidationError):
            TuneConfig(mode="full", proportion=0.5)
        with pytest.raises(ValidationError):
            TuneConfig(mode="full", lr=0.0)


class TestModelIo:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_params(SMALL, seed=50)
        prefix = init_prefix(SMALL, 5, seed=51)
        p = tmp_path / "model.vem"
        save_model(p, params, SMALL, prefix=prefix, extra={"note": "test"})
        params2, cfg2, prefix2 = load_model(p)
        assert cfg2 == SMALL
        assert set(params2) == set(params)
        for name in params:
            assert params2[name].tobytes() == params[name].tobytes(), name
        assert prefix2.m.tobytes() == prefix.m.tobytes()

    def test_round_trip_without_prefix(self, tmp_path):
        params = init_params(TINY, seed=52)
        p = tmp_path / "m.vem"
        save_model(p, params, TINY)
        params2, cfg2, prefix2 = load_model(p)
        assert prefix2 is None
        assert cfg2 == TINY

    def test_tamper_detection(self, tmp_path):
        import json
        params = init_params(TINY, seed=53)
        p = tmp_path / "m.vem"
        save_model(p, params, TINY)
        meta = json.loads(p.with_suffix(".json").read_text())
        meta["tensors"][0]["shape"] = [3, 3]
        p.with_suffix(".json").write_text(json.dumps(meta))
        with pytest.raises(ValidationError):
            load_model(p)

    def test_missing_tensor_rejected(self, tmp_path):
        params = init_params(TINY, seed=54)
        del params["w_out"]
        with pytest.raises(ValidationError, match="missing"):
            save_model(tmp_path / "m.vem", params, TINY)


class TestTask:
    def test_label_rule(self):
        ids, mask = make_classification_data(SMALL, 200, context_len=6,
                                             n_classes=4, seed=60)
        assert ids.shape == (200, 7) and mask.shape == ids.shape
        labels = ids[:, -1] - 1
        assert np.array_equal(labels, (ids[:, 0] + ids[:, 5]) % 4)
        assert mask[:, -1].all() and not mask[:, :-1].any()
        # context tokens never collide with label ids
        assert ids[:, :-1].min() >= 5

    def test_warmup_structure(self):
        ids, mask = make_warmup_data(SMALL, 500, seq_len=10, seed=61,
                                     stickiness=0.9)
        preferred = (7 * ids[:, :-1] + 3) % SMALL.vocab
        hit = (ids[:, 1:] == preferred).mean()
        assert 0.8 < hit < 1.0
        assert not mask[:, 0].any() and mask[:, 1:].all()

    def test_pretrained_beats_uniform_on_warmup_text(self):
        params = make_pretrained(SMALL, seed=62, warmup_steps=60)
        ids, mask = make_warmup_data(SMALL, 64, seq_len=10, seed=63)
        loss = compute_loss(params, SMALL, ids, mask)
        assert loss < 0.9 * math.log(SMALL.vocab)

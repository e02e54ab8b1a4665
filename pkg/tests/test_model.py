"""Model tests: shapes, head semantics, oracle comparisons, checkpoints."""

import numpy as np
import pytest

from palm import autograd as ag
from palm import model as md
from palm import tokenizer as tk
from palm.errors import DataError

import reference_model as ref


def tiny_cfg(vocab=30, **kw):
    base = dict(enc_layers=1, dec_layers=1, hidden=16, ffn=32, heads=2,
                dropout=0.0, max_context=24, max_target=10)
    base.update(kw)
    return md.ModelConfig(vocab_size=vocab, **base)


def tiny_model(seed=0, **kw):
    return md.PalmModel(tiny_cfg(**kw), seed=seed)


def example_ids(ctx, tgt, vocab=30):
    return md.Seq2SeqExample.from_ids(ctx, tgt, vocab)


# ---------------------------------------------------------------- config

def test_config_presets():
    paper = md.ModelConfig.paper_scale(vocab_size=1000)
    assert (paper.enc_layers, paper.dec_layers) == (12, 12)
    assert (paper.hidden, paper.ffn, paper.heads) == (768, 3072, 12)
    assert paper.dropout == 0.1
    desk = md.ModelConfig.desk(vocab_size=1000)
    assert desk.hidden == 128 and desk.enc_layers == 2
    assert (desk.max_context, desk.max_target) == (128, 32)
    assert (paper.max_context, paper.max_target) == (400, 100)


def test_config_rejects_indivisible_heads():
    with pytest.raises(DataError):
        md.ModelConfig(hidden=10, heads=4, vocab_size=30)


def test_config_lines_round_trip():
    cfg = tiny_cfg()
    again = md.ModelConfig.from_lines(cfg.to_lines())
    assert again == cfg
    with pytest.raises(DataError):
        md.ModelConfig.from_lines("nonsense=1\n")


# ---------------------------------------------------------------- encoder

def test_encoder_shapes_and_determinism():
    m = tiny_model()
    ids = [5, 6, 7, 8, 9, 10, 11]
    out1 = m.encode(ids)
    out2 = m.encode(ids)
    assert out1.states.shape == (7, 16)
    assert out1.mlm_logits.shape == (7, 30)
    assert np.array_equal(out1.states.data, out2.states.data)


def test_encoder_rejects_bad_lengths():
    m = tiny_model()
    with pytest.raises(DataError):
        m.encode([])
    with pytest.raises(DataError):
        m.encode(list(range(5, 5 + 25)))  # limit is 24


def test_position_embedding_isolation():
    m = tiny_model()
    m.params["pos_enc"].data[:] = 0.0
    a = m.encode([5, 6, 7, 8]).states.data
    b = m.encode([5, 7, 6, 8]).states.data
    assert np.allclose(a[0], b[0], atol=1e-6)
    assert np.allclose(a[1], b[2], atol=1e-6)
    assert np.allclose(a[2], b[1], atol=1e-6)
    assert np.allclose(a[3], b[3], atol=1e-6)


# ---------------------------------------------------------------- decoder

def test_decoder_validates_prefix():
    m = tiny_model()
    enc = m.encode([5, 6])
    with pytest.raises(DataError):
        m.decoder_states([], enc)
    with pytest.raises(DataError):
        m.decoder_states([7, 8], enc)  # must start with [BOS]


def test_decoder_causality():
    m = tiny_model()
    enc = m.encode([5, 6, 7])
    short = m.decoder_states([tk.BOS_ID, 9, 10], enc).data
    longer = m.decoder_states([tk.BOS_ID, 9, 10, 11], enc).data
    assert np.abs(short - longer[:3]).max() < 1e-5


def test_cross_attention_carries_the_context():
    m = tiny_model()
    a = m.decode_step([tk.BOS_ID, 9], m.encode([5, 6])).data
    b = m.decode_step([tk.BOS_ID, 9], m.encode([7, 8])).data
    assert not np.allclose(a, b)
    # zeroing every cross-attention output projection cuts the dependence
    for i in range(m.cfg.dec_layers):
        m.params[f"dec{i}.xattn.wo"].data[:] = 0.0
        m.params[f"dec{i}.xattn.bo"].data[:] = 0.0
    a = m.decode_step([tk.BOS_ID, 9], m.encode([5, 6])).data
    b = m.decode_step([tk.BOS_ID, 9], m.encode([7, 8])).data
    assert np.allclose(a, b, atol=1e-6)


# ---------------------------------------------------------------- heads

def test_vocab_distribution_normalized_with_zero_extras():
    m = tiny_model()
    s = m.decode_step([tk.BOS_ID], m.encode([5, 6, 7]))
    pv = m.vocab_distribution(s, ext_size=34).data[0]
    assert pv.shape == (34,)
    assert abs(pv.sum() - 1.0) < 1e-6
    assert (pv[30:] == 0.0).all()  # extras are exactly zero, not merely small


def test_vocab_distribution_recovers_embedding_row():
    m = tiny_model()
    m.params["lm.w"].data[:] = np.eye(16, dtype=np.float32)
    m.params["lm.b"].data[:] = 0.0
    emb = m.params["tok_emb"].data
    r = 17
    s = ag.Tensor(30.0 / np.abs(emb[r]).max() * emb[r][None, :].copy())
    pv = m.vocab_distribution(s).data[0]
    expected = np.argmax(emb.astype(np.float64) @ emb[r].astype(np.float64))
    assert np.argmax(pv) == expected == r


def test_copy_attention_single_position():
    m = tiny_model()
    enc = m.encode([9])
    s = m.decode_step([tk.BOS_ID], enc)
    alpha, z = m.copy_attention(s, enc)
    assert np.allclose(alpha.data, [[1.0]])
    assert np.allclose(z.data[0], enc.states.data[0], atol=1e-6)


def test_copy_attention_uniform_over_identical_states():
    m = tiny_model()
    row = np.random.default_rng(0).standard_normal(16).astype(np.float32)
    enc = md.EncoderOutput(states=ag.Tensor(np.tile(row, (5, 1))), mlm_logits=None)
    s = ag.Tensor(np.random.default_rng(1).standard_normal((1, 16)).astype(np.float32))
    alpha, z = m.copy_attention(s, enc)
    assert np.allclose(alpha.data, 0.2, atol=1e-6)
    assert np.allclose(z.data[0], row, atol=1e-6)


def test_copy_attention_matches_hand_formula():
    m = md.PalmModel(tiny_cfg(), seed=3)
    enc = m.encode([5, 6, 7])
    s = m.decode_step([tk.BOS_ID, 8], enc)
    alpha, z = m.copy_attention(s, enc)
    r = ref.RefModel(m.cfg, m.params)
    h = enc.states.data.astype(np.float64)
    st = s.data[0].astype(np.float64)
    _, lam, ralpha = ref.step_probs(r, h, st, [5, 6, 7], 30, True)
    assert np.abs(alpha.data[0] - ralpha).max() < 1e-5
    assert np.abs(z.data[0] - ralpha @ h).max() < 1e-5


def test_copy_distribution_sums_positions():
    m = tiny_model()
    alpha = ag.Tensor(np.array([[0.5, 0.3, 0.2]], dtype=np.float32))
    pc = m.copy_distribution(alpha, [7, 9, 7], 30).data[0]
    assert abs(pc[7] - 0.7) < 1e-6
    assert abs(pc[9] - 0.3) < 1e-6
    assert abs(pc.sum() - 1.0) < 1e-6
    assert np.count_nonzero(pc) == 2


def test_copy_distribution_handles_extras_and_repeats():
    m = tiny_model()
    alpha = ag.Tensor(np.array([[0.3, 0.7]], dtype=np.float32))
    pc = m.copy_distribution(alpha, [31, 8], 32).data[0]
    assert abs(pc[31] - 0.3) < 1e-6
    same = m.copy_distribution(ag.Tensor(np.full((1, 4), 0.25, dtype=np.float32)), [6, 6, 6, 6], 30)
    assert abs(same.data[0][6] - 1.0) < 1e-6


def test_mixture_extremes_and_midpoint():
    m = tiny_model()
    pv = ag.Tensor(np.array([[0.5, 0.5, 0.0]], dtype=np.float32))
    pc = ag.Tensor(np.array([[0.25, 0.0, 0.75]], dtype=np.float32))
    z = ag.Tensor(np.zeros((1, 16), dtype=np.float32))
    s = ag.Tensor(np.zeros((1, 16), dtype=np.float32))
    m.params["ptr.gate_ctx"].data[:] = 0.0
    m.params["ptr.gate_dec"].data[:] = 0.0

    m.params["ptr.gate_b"].data[()] = 1e9
    p, lam = m.mixture(pv, pc, z, s)
    assert np.allclose(p.data, pv.data)
    assert lam.data[0, 0] == 1.0

    m.params["ptr.gate_b"].data[()] = -1e9
    p, _ = m.mixture(pv, pc, z, s)
    assert np.allclose(p.data, pc.data)

    m.params["ptr.gate_b"].data[()] = np.log(0.6 / 0.4)
    p, lam = m.mixture(pv, pc, z, s)
    assert abs(lam.data[0, 0] - 0.6) < 1e-6
    assert abs(p.data[0, 0] - 0.4) < 1e-6  # 0.6*0.5 + 0.4*0.25


# ---------------------------------------------------------------- losses

def test_forced_copy_gives_zero_nll():
    m = tiny_model()
    m.params["ptr.gate_ctx"].data[:] = 0.0
    m.params["ptr.gate_dec"].data[:] = 0.0
    m.params["ptr.gate_b"].data[()] = -1e9  # pure copy
    ex = example_ids([7, 7, 7], [7, 7])
    nll, clamped = m.generation_loss(ex)
    # every step copies token 7 with probability 1; the final [EOS] step
    # cannot be copied and bottoms out at the probability floor
    assert np.abs(nll.data[:-1]).max() < 1e-6
    assert clamped == 1
    assert abs(nll.data[-1] + np.log(1e-9)) < 1e-3


def test_uniform_model_nll_is_log_vocab():
    m = tiny_model()
    m.params["tok_emb"].data[:] = 0.0
    m.params["lm.b"].data[:] = 0.0
    ex = example_ids([5, 6], [7, 8])
    nll, clamped = m.generation_loss(ex, use_pointer=False)
    assert clamped == 0
    assert np.abs(nll.data - np.log(30.0)).max() < 1e-6


def test_loss_matches_reference_chain():
    cfg = tiny_cfg(hidden=4, ffn=8, heads=1, vocab=20)
    params = md.init_params(cfg, seed=5, dtype=np.float64)
    m = md.PalmModel(cfg, params)
    ex = md.Seq2SeqExample(
        context_ids=np.array([5, 9, 6]),
        context_ext_ids=np.array([5, 20, 6]),  # position 1 holds an OOV word
        decoder_input_ids=np.array([tk.BOS_ID, 7, tk.UNK_ID]),
        gold_ids=np.array([7, 20, tk.EOS_ID]),
        ext_size=21,
    )
    for use_pointer in (True, False):
        nll, _ = m.generation_loss(ex, use_pointer=use_pointer)
        expected = ref.generation_nll(cfg, params, ex, use_pointer=use_pointer)
        assert np.abs(nll.data - expected).max() < 1e-5


def test_step_distribution_invariants_random_model():
    m = md.PalmModel(tiny_cfg(), seed=9)
    ex = md.Seq2SeqExample(
        context_ids=np.array([5, tk.UNK_ID, 6, 5]),
        context_ext_ids=np.array([5, 30, 6, 5]),
        decoder_input_ids=np.array([tk.BOS_ID, 7]),
        gold_ids=np.array([7, tk.EOS_ID]),
        ext_size=31,
    )
    dist = m.step_distributions(ex, [tk.BOS_ID, 7])
    assert abs(dist.p_final.sum() - 1.0) < 1e-5
    assert (dist.p_final >= 0).all()
    assert 0.0 < dist.mix < 1.0
    assert abs(dist.alpha.sum() - 1.0) < 1e-6


def test_nll_causality_in_target():
    m = tiny_model(seed=4)
    a, _ = m.generation_loss(example_ids([5, 6, 7], [8, 9, 10, 11]))
    b, _ = m.generation_loss(example_ids([5, 6, 7], [8, 9, 10, 12]))
    assert np.abs(a.data[:3] - b.data[:3]).max() < 1e-6
    assert abs(a.data[3] - b.data[3]) > 0  # the changed gold token itself


def test_mlm_loss_only_reads_selected_positions():
    m = tiny_model()
    ids = np.array([5, 6, 7, 8])
    labels = np.array([-1, 6, -1, -1])
    loss = m.mlm_loss(ids, labels)
    logp = ag.log_softmax(m.encode(ids).mlm_logits).data
    assert abs(loss.item() + logp[1, 6]) < 1e-6
    zero = m.mlm_loss(ids, np.full(4, -1))
    assert zero.item() == 0.0


def test_forward_loss_composes():
    from palm.pipeline import mask_context

    m = tiny_model()
    ex = example_ids([5, 6, 7, 8, 9, 10], [11, 12])
    masked = mask_context(ex.context_ids, vocab_size=30, seed=1)
    out = m.forward_loss(ex, masked=masked)
    assert out.mlm_loss is not None
    assert out.nll_per_token.shape == (3,)
    plain = m.forward_loss(ex)
    assert plain.mlm_loss is None
    assert np.allclose(plain.nll_per_token.data, out.nll_per_token.data, atol=1e-6)


# ---------------------------------------------------------------- tying / grads

def test_embedding_tie_is_single_storage():
    m = tiny_model()
    s = m.decode_step([tk.BOS_ID], m.encode([5, 6]))
    before = m.vocab_distribution(s).data.copy()
    m.params["tok_emb"].data[7] += 1.0
    after = m.vocab_distribution(m.decode_step([tk.BOS_ID], m.encode([5, 6]))).data
    assert not np.allclose(before, after)


def test_gradients_reach_every_head():
    m = tiny_model(seed=2)
    ex = md.Seq2SeqExample(
        context_ids=np.array([5, tk.UNK_ID, 6]),
        context_ext_ids=np.array([5, 30, 6]),
        decoder_input_ids=np.array([tk.BOS_ID, tk.UNK_ID, 7]),
        gold_ids=np.array([30, 7, tk.EOS_ID]),  # one copied, two generated
        ext_size=31,
    )
    nll, _ = m.generation_loss(ex)
    nll.mean().backward()
    for name in ["tok_emb", "lm.w", "lm.b", "ptr.score_w", "ptr.ctx_proj",
                 "ptr.dec_proj", "ptr.score_b", "ptr.gate_ctx", "ptr.gate_dec", "ptr.gate_b"]:
        grad = m.params[name].grad
        assert grad is not None, name
        assert np.abs(grad).max() > 0, name


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    m = tiny_model(seed=6)
    extra = {"opt.m.lm.w": np.ones((16, 16), dtype=np.float32), "meta.step": np.array(12.0, dtype=np.float32)}
    path = tmp_path / "model.plmc"
    md.save_checkpoint(path, m.cfg, m.params, extra)
    cfg, params, loaded_extra = md.load_checkpoint(path)
    assert cfg == m.cfg
    assert set(params) == set(m.params)
    for name, t in m.params.items():
        assert np.array_equal(params[name], t.data), name
    assert np.array_equal(loaded_extra["opt.m.lm.w"], extra["opt.m.lm.w"])
    assert float(loaded_extra["meta.step"]) == 12.0

    m2, extra2 = md.model_from_checkpoint(path)
    assert np.array_equal(m2.params["tok_emb"].data, m.params["tok_emb"].data)
    assert "meta.step" in extra2


def test_checkpoint_rejects_corruption(tmp_path):
    m = tiny_model()
    path = tmp_path / "model.plmc"
    md.save_checkpoint(path, m.cfg, m.params)
    blob = path.read_bytes()
    bad = tmp_path / "bad.plmc"
    bad.write_bytes(b"ZZZZ" + blob[4:])
    with pytest.raises(DataError):
        md.load_checkpoint(bad)
    short = tmp_path / "short.plmc"
    short.write_bytes(blob[:-10])
    with pytest.raises(DataError):
        md.load_checkpoint(short)


def test_checkpoint_header_layout(tmp_path):
    m = tiny_model()
    path = tmp_path / "model.plmc"
    md.save_checkpoint(path, m.cfg, m.params)
    blob = path.read_bytes()
    assert blob[:4] == b"PLMC"
    assert int.from_bytes(blob[4:8], "little") == 1


def test_init_param_isolation():
    # a parameter's init draw depends only on (seed, name), not on the set
    a = md.init_params(tiny_cfg(), seed=1)
    b = md.init_params(tiny_cfg(vocab=40), seed=1)
    assert np.array_equal(a["lm.w"].data, b["lm.w"].data)
    c = md.init_params(tiny_cfg(), seed=2)
    assert not np.array_equal(a["lm.w"].data, c["lm.w"].data)

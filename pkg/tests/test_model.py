"""Encoder masking, relation-layer behavior, head contracts, causality."""

import numpy as np
import pytest

from jointkp.autodiff import Tensor
from jointkp.data import SPECIALS, Vocabulary, assemble, prepare_sample, sample_rng, source_only_input
from jointkp.model import EncoderConfig, KeyphraseModel, mask_to_bias

VOCAB = Vocabulary(SPECIALS + [f"w{i}" for i in range(12)])


def small_config(**over):
    base = dict(vocab_size=len(VOCAB), d_model=16, n_heads=2, n_layers=1,
                ff_width=32, dropout=0.0, max_len=48, srl_layers=1)
    base.update(over)
    return EncoderConfig(**base)


def encoded(doc="w0 w1 w2 w3", kps=("w1 w2", "w9 w10"), mask_prob=0.6, seed=0):
    raw = {"id": "t", "document": doc, "keyphrases": list(kps)}
    s = prepare_sample(raw, VOCAB)
    return assemble(s, VOCAB, mask_prob, 48, sample_rng(seed, s.id))


def test_config_validates_divisibility():
    with pytest.raises(ValueError):
        small_config(d_model=10, n_heads=4)


def test_hidden_rejects_overlong_input():
    model = KeyphraseModel(small_config(max_len=4), seed=0)
    ids = np.arange(6, dtype=np.int64)
    with pytest.raises(ValueError):
        model.hidden(ids, np.zeros(6, dtype=np.int64), mask_to_bias(np.ones((6, 6), bool)))


def test_single_token_input_shape():
    model = KeyphraseModel(small_config(), seed=0)
    h = model.hidden(np.array([7]), np.array([0]), mask_to_bias(np.ones((1, 1), bool)))
    assert h.data.shape == (1, 16)


def test_permuting_masked_out_keys_leaves_source_rows_unchanged():
    model = KeyphraseModel(small_config(srl_layers=2), seed=1)
    enc = encoded()
    y_p1, _ = model.forward(enc)
    # scramble the target segment tokens; source rows must not notice
    enc2 = encoded()
    tgt = slice(enc2.src_len, len(enc2.ids) - 1)
    enc2.ids[tgt] = enc2.ids[tgt][::-1].copy()
    enc2.ids[len(enc2.ids) - 1] = VOCAB.id("w5")  # even the final [SEP]
    y_p2, _ = model.forward(enc2)
    assert np.allclose(y_p1.data, y_p2.data, atol=1e-5)


def test_causality_differencing():
    """Perturbing target token j: no y_p change, no y_a change before j."""
    model = KeyphraseModel(small_config(srl_layers=2), seed=2)
    enc = encoded(mask_prob=0.5, seed=5)
    # pick a realized (non-mask) target position to perturb
    tgt_positions = [i for i in range(enc.src_len, len(enc.ids) - 1)
                     if i not in set(enc.mask_positions.tolist())]
    assert tgt_positions, "need a realized target token"
    j = tgt_positions[-1]
    y_p1, y_a1 = model.forward(enc)
    enc.ids[j] = VOCAB.id("w7")
    y_p2, y_a2 = model.forward(enc)
    assert np.array_equal(y_p1.data, y_p2.data)
    before = enc.mask_positions < j
    assert np.array_equal(y_a1.data[before], y_a2.data[before])
    after = ~before
    if after.any():  # sanity: the perturbation does reach later positions
        assert not np.allclose(y_a1.data[after], y_a2.data[after], atol=1e-7)


def test_specialize_zero_projection_is_layer_norm_of_input():
    model = KeyphraseModel(small_config(), seed=3)
    model.store["rel0.p_proj.w"].data[...] = 0.0
    model.store["rel0.p_proj.b"].data[...] = 0.0
    x = Tensor(np.random.default_rng(0).normal(size=(5, 16)).astype(np.float32))
    out = model.specialize(x, 0, "p")
    from jointkp.autodiff import layer_norm

    expect = layer_norm(x, model.store["rel0.p_spec_ln.g"], model.store["rel0.p_spec_ln.b"])
    assert np.allclose(out.data, expect.data, atol=1e-6)


def test_specialize_all_negative_preactivation_matches_zero_case():
    model = KeyphraseModel(small_config(), seed=3)
    x = Tensor(np.abs(np.random.default_rng(1).normal(size=(4, 16))).astype(np.float32))
    model.store["rel0.p_proj.w"].data[...] = 0.0
    model.store["rel0.p_proj.b"].data[...] = -5.0  # ReLU kills everything
    neg = model.specialize(x, 0, "p")
    model.store["rel0.p_proj.b"].data[...] = 0.0
    zero = model.specialize(x, 0, "p")
    assert np.allclose(neg.data, zero.data, atol=1e-6)


def test_coattend_single_position_adds_streams():
    model = KeyphraseModel(small_config(), seed=4)
    rng = np.random.default_rng(2)
    p = Tensor(rng.normal(size=(1, 16)).astype(np.float32))
    a = Tensor(rng.normal(size=(1, 16)).astype(np.float32))
    p_out, _ = model.coattend(p, a, 0)
    from jointkp.autodiff import add, layer_norm

    expect = layer_norm(add(p, a), model.store["rel0.p_co_ln.g"], model.store["rel0.p_co_ln.b"])
    assert np.allclose(p_out.data, expect.data, atol=1e-6)


def test_coattend_zero_other_stream_is_layer_norm_only():
    model = KeyphraseModel(small_config(), seed=4)
    p = Tensor(np.random.default_rng(3).normal(size=(4, 16)).astype(np.float32))
    a = Tensor(np.zeros((4, 16), dtype=np.float32))
    p_out, _ = model.coattend(p, a, 0)
    from jointkp.autodiff import layer_norm

    expect = layer_norm(p, model.store["rel0.p_co_ln.g"], model.store["rel0.p_co_ln.b"])
    assert np.allclose(p_out.data, expect.data, atol=1e-6)


def test_coattend_matches_dense_hand_rolled():
    model = KeyphraseModel(small_config(), seed=5)
    rng = np.random.default_rng(4)
    p = rng.normal(size=(3, 16)).astype(np.float32)
    a = rng.normal(size=(3, 16)).astype(np.float32)
    p_out, a_out = model.coattend(Tensor(p), Tensor(a), 0)

    def softmax(x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def ln(x, g, b):
        mu = x.mean(-1, keepdims=True)
        var = x.var(-1, keepdims=True)
        return g * (x - mu) / np.sqrt(var + 1e-5) + b

    s = model.store
    wp = softmax(p @ a.T)
    wa = softmax(a @ p.T)
    assert np.allclose(wp.sum(1), 1.0, atol=1e-6)
    exp_p = ln(p + wp @ a, s["rel0.p_co_ln.g"].data, s["rel0.p_co_ln.b"].data)
    exp_a = ln(a + wa @ p, s["rel0.a_co_ln.g"].data, s["rel0.a_co_ln.b"].data)
    assert np.allclose(p_out.data, exp_p, atol=1e-5)
    assert np.allclose(a_out.data, exp_a, atol=1e-5)


def test_stack_depth_zero_is_identity_on_both_streams():
    model = KeyphraseModel(small_config(srl_layers=0), seed=6)
    h = Tensor(np.random.default_rng(5).normal(size=(6, 16)).astype(np.float32))
    p, a = model.task_streams(h, None)
    assert p is h and a is h


def test_stack_depth_two_has_two_parameter_sets():
    model = KeyphraseModel(small_config(srl_layers=2), seed=6)
    names = model.store.names()
    assert any(n.startswith("rel0.") for n in names)
    assert any(n.startswith("rel1.") for n in names)
    assert not any(n.startswith("rel2.") for n in names)


def test_eval_passes_are_bit_identical_despite_dropout_config():
    model = KeyphraseModel(small_config(dropout=0.5, srl_layers=2), seed=7)
    enc = encoded()
    y1, a1 = model.forward(enc, train=False)
    y2, a2 = model.forward(enc, train=False)
    assert np.array_equal(y1.data, y2.data) and np.array_equal(a1.data, a2.data)


def test_streams_diverge_on_random_init():
    model = KeyphraseModel(small_config(srl_layers=1), seed=8)
    enc = encoded()
    p, a = model.streams_for(enc)
    assert not np.allclose(p.data, a.data, atol=1e-4)


def test_head_rows_sum_to_one():
    model = KeyphraseModel(small_config(), seed=9)
    enc = encoded()
    y_p, y_a = model.forward(enc)
    assert np.allclose(y_p.data.sum(axis=1), 1.0, atol=1e-6)
    assert np.allclose(y_a.data.sum(axis=1), 1.0, atol=1e-6)


def test_head_zero_masked_positions_gives_zero_rows():
    model = KeyphraseModel(small_config(), seed=9)
    s = prepare_sample({"id": "t", "document": "w0 w1", "keyphrases": []}, VOCAB)
    enc = source_only_input(s.doc_tokens, VOCAB, 48)
    y_p, y_a = model.forward(enc)
    assert y_a.data.shape[0] == 0
    assert y_p.data.shape == (2, 4)


def test_zero_weight_present_head_is_uniform():
    model = KeyphraseModel(small_config(), seed=9)
    model.store["head.present.w"].data[...] = 0.0
    model.store["head.present.b"].data[...] = 0.0
    enc = encoded()
    y_p, _ = model.forward(enc)
    assert np.allclose(y_p.data, 0.25, atol=1e-7)

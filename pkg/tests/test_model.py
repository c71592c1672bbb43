"""Transformer contract tests: shapes, determinism, masking, gradients."""

import numpy as np
import pytest

from vqbridge import autodiff as ad
from vqbridge.errors import ContractViolation
from vqbridge.model import ModelConfig, TranslationModel, sinusoidal_positions

from oracles import central_diff_grad, max_rel_err

PAD = 0


def tiny_model(seed=0, **over):
    cfg = dict(vocab_size=16, d_model=8, n_heads=2, n_layers_enc=1,
               n_layers_dec=1, d_ffn=16, dropout=0.0)
    cfg.update(over)
    return TranslationModel.init(ModelConfig(**cfg), np.random.default_rng(seed))


# -- config validation -------------------------------------------------------

def test_config_rejects_head_mismatch():
    with pytest.raises(ContractViolation):
        ModelConfig(vocab_size=10, d_model=10, n_heads=4).validate()


def test_config_rejects_bad_probability():
    with pytest.raises(ContractViolation):
        ModelConfig(vocab_size=10, dropout=1.5).validate()


def test_config_rejects_unknown_activation():
    with pytest.raises(ContractViolation):
        ModelConfig(vocab_size=10, activation="swish").validate()


def test_out_of_range_token_rejected():
    m = tiny_model()
    with pytest.raises(ContractViolation):
        m.encode(np.array([[1, 99, 2]]), pad_id=PAD)


def test_context_dim_mismatch_rejected():
    m = tiny_model()
    bad = ad.Tensor(np.zeros((1, 3, 12)))
    with pytest.raises(ContractViolation):
        m.decode(bad, np.ones((1, 3), dtype=bool), np.array([[1, 2]]))


# -- sinusoidal positions -----------------------------------------------------

def test_positions_shape_and_first_row():
    pe = sinusoidal_positions(5, 8)
    assert pe.shape == (5, 8)
    # position 0: sin(0)=0 on even dims, cos(0)=1 on odd dims
    np.testing.assert_array_equal(pe[0], np.array([0, 1, 0, 1, 0, 1, 0, 1], dtype=float))


def test_positions_values_match_definition():
    pe = sinusoidal_positions(7, 6)
    for pos in range(7):
        for i in range(6):
            angle = pos / 10000.0 ** ((2 * (i // 2)) / 6)
            want = np.sin(angle) if i % 2 == 0 else np.cos(angle)
            assert abs(pe[pos, i] - want) < 1e-12


# -- encode -------------------------------------------------------------------

def test_encode_shape():
    m = tiny_model()
    out = m.encode(np.array([[3, 4, 5]]), pad_id=PAD)
    assert out.states.shape == (1, 3, 8)
    assert out.mask.shape == (1, 3)
    assert out.mask.all()


def test_identical_sentences_identical_rows():
    m = tiny_model()
    out = m.encode(np.array([[3, 4, 5], [3, 4, 5]]), pad_id=PAD)
    np.testing.assert_array_equal(out.states.data[0], out.states.data[1])


def test_batch_permutation_permutes_states():
    m = tiny_model()
    a = np.array([[3, 4, 5], [6, 7, 2], [9, 1, 8]])
    out = m.encode(a, pad_id=PAD).states.data
    out_perm = m.encode(a[[2, 0, 1]], pad_id=PAD).states.data
    np.testing.assert_array_equal(out_perm, out[[2, 0, 1]])


def test_encode_deterministic_given_seed():
    m = tiny_model(dropout=0.3)
    toks = np.array([[3, 4, 5, 6]])
    a = m.encode(toks, PAD, rng=np.random.default_rng(7)).states.data
    b = m.encode(toks, PAD, rng=np.random.default_rng(7)).states.data
    np.testing.assert_array_equal(a, b)
    c = m.encode(toks, PAD, rng=np.random.default_rng(8)).states.data
    assert not np.array_equal(a, c)


def test_padding_invariance_encoder():
    m = tiny_model()
    toks = np.array([[3, 4, 5, 6]])
    padded = np.array([[3, 4, 5, 6, PAD, PAD]])
    base = m.encode(toks, PAD).states.data
    ext = m.encode(padded, PAD).states.data
    np.testing.assert_array_equal(ext[:, :4, :], base)


# -- decode -------------------------------------------------------------------

def test_decode_shape_and_bos_only_prefix():
    m = tiny_model()
    enc = m.encode(np.array([[3, 4, 5]]), PAD)
    logits = m.decode(enc.states, enc.mask, np.array([[1]]))
    assert logits.shape == (1, 1, 16)


def test_causal_invariance_bit_identical():
    m = tiny_model()
    enc = m.encode(np.array([[3, 4, 5]]), PAD)
    tgt = np.array([[1, 5, 6, 7, 8, 9, 10, 11]])
    tgt2 = tgt.copy()
    tgt2[0, 5] = 13
    la = m.decode(enc.states, enc.mask, tgt).data
    lb = m.decode(enc.states, enc.mask, tgt2).data
    np.testing.assert_array_equal(la[:, :5, :], lb[:, :5, :])
    assert not np.array_equal(la[:, 5:, :], lb[:, 5:, :])


def test_padding_invariance_decoder_logits():
    m = tiny_model()
    toks = np.array([[3, 4, 5, 6]])
    padded = np.array([[3, 4, 5, 6, PAD, PAD]])
    tgt = np.array([[1, 5, 6]])
    enc = m.encode(toks, PAD)
    enc_p = m.encode(padded, PAD)
    la = m.decode(enc.states, enc.mask, tgt).data
    lb = m.decode(enc_p.states, enc_p.mask, tgt).data
    np.testing.assert_array_equal(la, lb)


def test_quantized_context_changes_logits():
    from vqbridge.quantizer import QuantizerConfig, init_codebook, quantize

    m = tiny_model()
    enc = m.encode(np.array([[3, 4, 5]]), PAD)
    cb = init_codebook(8, 8, 1.0, np.random.default_rng(1))
    out = quantize(enc, cb, QuantizerConfig(codebook_size=8, n_slices=2, p_quantize=1.0), gate_draw=0.0)
    assert out.used_quantized
    la = m.decode(enc.states, enc.mask, np.array([[1, 5]])).data
    lb = m.decode(out.context, enc.mask, np.array([[1, 5]])).data
    assert not np.array_equal(la, lb)


# -- full-model gradient check -------------------------------------------------

def test_full_model_gradient_check():
    m = tiny_model(seed=3, vocab_size=11)
    src = np.array([[3, 4, 5, PAD], [6, 7, 8, 9]])
    tgt_in = np.array([[1, 3, 4], [1, 5, 6]])
    tgt_out = np.array([[3, 4, 2], [5, 6, 2]])
    tgt_mask = np.ones_like(tgt_out, dtype=bool)

    def loss_value():
        enc = m.encode(src, PAD)
        logits = m.decode(enc.states, enc.mask, tgt_in)
        return float(ad.smoothed_cross_entropy(logits, tgt_out, tgt_mask, 0.1).data)

    with ad.Tape() as tape:
        enc = m.encode(src, PAD)
        logits = m.decode(enc.states, enc.mask, tgt_in)
        loss = ad.smoothed_cross_entropy(logits, tgt_out, tgt_mask, 0.1)
        tape.backward(loss)

    worst = 0.0
    for name, p in m.parameters().items():
        assert p.grad is not None, f"no gradient reached {name}"
        fd = central_diff_grad(lambda _x: loss_value(), p.data)
        err = max_rel_err(p.grad, fd)
        worst = max(worst, err)
        assert err < 1e-5, f"{name}: rel err {err:.2e}"
    assert worst < 1e-5

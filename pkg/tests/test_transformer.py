import numpy as np
import pytest

from sagvit.backbone import ConfigError
from sagvit.transformer import (EncoderBlock, HeadParams, SelfAttention,
                                TransformerConfig, classify, global_mean_pool,
                                positional_encoding, token_correlation)
from sagvit.tensor import Tensor, grad_check


def test_positional_encoding_pos_zero():
    p = positional_encoding(3, 8)
    assert np.allclose(p[0, 0::2], 0.0)
    assert np.allclose(p[0, 1::2], 1.0)


def test_positional_encoding_none_is_zero():
    assert np.array_equal(positional_encoding(5, 6, "none"), np.zeros((5, 6)))


def test_positional_encoding_pos_one_values():
    p = positional_encoding(2, 4)
    want = [np.sin(1.0), np.cos(1.0), np.sin(0.01), np.cos(0.01)]
    assert np.allclose(p[1], want, atol=1e-9)


def test_positional_encoding_rejects_odd_dim():
    with pytest.raises(ConfigError):
        positional_encoding(4, 5)


def test_positional_encoding_deterministic():
    assert np.array_equal(positional_encoding(7, 16), positional_encoding(7, 16))


def attention_reference(x, attn: SelfAttention):
    """Single-loop per-head oracle for scaled dot-product attention."""
    cfg = attn.cfg
    q = x @ attn.wq.data.T + attn.bq.data
    k = x @ attn.wk.data.T + attn.bk.data
    v = x @ attn.wv.data.T + attn.bv.data
    outs = []
    for h in range(cfg.n_heads):
        sl = slice(h * cfg.d_k, (h + 1) * cfg.d_k)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        out = np.zeros_like(qh)
        for i in range(x.shape[0]):
            scores = qh[i] @ kh.T / np.sqrt(cfg.d_k)
            e = np.exp(scores - scores.max())
            out[i] = (e / e.sum()) @ vh
        outs.append(out)
    return np.concatenate(outs, axis=1) @ attn.wo.data.T + attn.bo.data


def test_self_attention_single_token(rng):
    cfg = TransformerConfig(d_model=4, n_heads=2, num_layers=1, d_ff=8)
    attn = SelfAttention(cfg, rng, "t")
    x = Tensor(rng.normal(size=(1, 4)))
    out, weights = attn(x, return_weights=True)
    assert out.shape == (1, 4)
    for w in weights:
        assert np.allclose(w, 1.0)


def test_self_attention_identical_tokens_uniform(rng):
    cfg = TransformerConfig(d_model=4, n_heads=2, num_layers=1, d_ff=8)
    attn = SelfAttention(cfg, rng, "t")
    x = Tensor(np.tile(rng.normal(size=(1, 4)), (5, 1)))
    _, weights = attn(x, return_weights=True)
    for w in weights:
        assert np.allclose(w, 0.2)


def test_self_attention_matches_reference(rng):
    cfg = TransformerConfig(d_model=4, n_heads=2, num_layers=1, d_ff=8)
    attn = SelfAttention(cfg, rng, "t")
    x = rng.normal(size=(3, 4))
    out = attn(Tensor(x))
    assert np.max(np.abs(out.data - attention_reference(x, attn))) < 1e-10


def test_attention_rows_sum_to_one(rng):
    for _ in range(10):
        n_heads = int(rng.integers(1, 4))
        d_model = n_heads * int(rng.integers(2, 5))
        cfg = TransformerConfig(d_model=d_model, n_heads=n_heads, num_layers=1, d_ff=8)
        attn = SelfAttention(cfg, np.random.default_rng(int(rng.integers(0, 1000))), "t")
        x = Tensor(rng.normal(scale=3.0, size=(int(rng.integers(1, 7)), d_model)))
        _, weights = attn(x, return_weights=True)
        for w in weights:
            assert np.max(np.abs(w.sum(axis=1) - 1.0)) < 1e-9


def test_encoder_block_zeroed_projections_is_identity(rng):
    cfg = TransformerConfig(d_model=6, n_heads=2, num_layers=1, d_ff=12)
    blk = EncoderBlock(cfg, rng, "b")
    blk.attn.wo.data[...] = 0.0
    blk.attn.bo.data[...] = 0.0
    blk.w2.data[...] = 0.0
    blk.b2.data[...] = 0.0
    x = rng.normal(size=(4, 6))
    out = blk(Tensor(x))
    assert np.array_equal(out.data, x)


def test_encoder_block_preserves_shape(rng):
    cfg = TransformerConfig(d_model=8, n_heads=4, num_layers=1, d_ff=16)
    blk = EncoderBlock(cfg, rng, "b")
    assert blk(Tensor(rng.normal(size=(5, 8)))).shape == (5, 8)


def test_two_blocks_gradient(rng):
    cfg = TransformerConfig(d_model=4, n_heads=2, num_layers=2, d_ff=8)
    b1 = EncoderBlock(cfg, rng, "b1")
    b2 = EncoderBlock(cfg, rng, "b2")
    x = Tensor(rng.normal(size=(3, 4)))
    target = Tensor(rng.normal(size=(3, 4)))
    report = grad_check(lambda: (b2(b1(x)) * target).sum(),
                        b1.parameters() + b2.parameters())
    assert max(report.values()) <= 1e-4


def test_global_mean_pool():
    assert np.array_equal(global_mean_pool(Tensor([[3.0, 7.0]])).data, [[3.0, 7.0]])
    out = global_mean_pool(Tensor([[1.0, 3.0], [3.0, 1.0]]))
    assert np.array_equal(out.data, [[2.0, 2.0]])
    with pytest.raises(ValueError):
        global_mean_pool(Tensor(np.zeros((0, 4))))


def test_global_mean_pool_permutation_invariant(rng):
    x = rng.normal(size=(6, 5))
    a = global_mean_pool(Tensor(x)).data
    b = global_mean_pool(Tensor(x[rng.permutation(6)])).data
    assert np.allclose(a, b)


def test_classify_uniform_and_dominant(rng):
    head = HeadParams(4, 3, rng)
    head.w_out.data[...] = 0.0
    head.b_out.data[...] = 0.0
    probs = classify(Tensor(rng.normal(size=(1, 4))), head).data
    assert np.allclose(probs, 1 / 3)

    head2 = HeadParams(4, 2, rng)
    head2.w_out.data[...] = 0.0
    head2.b_out.data[...] = [10.0, -10.0]
    probs = classify(Tensor(rng.normal(size=(1, 4))), head2).data
    assert np.allclose(probs, [[1.0, 0.0]], atol=1e-8)


def test_classify_argmax_shift_invariant(rng):
    head = HeadParams(4, 3, rng)
    z = Tensor(rng.normal(size=(1, 4)))
    base = np.argmax(classify(z, head).data)
    head.b_out.data += 7.5  # uniform logit shift
    assert np.argmax(classify(z, head).data) == base


def test_classify_rejects_single_class(rng):
    with pytest.raises(ConfigError):
        HeadParams(4, 1, rng)


def test_token_correlation_basic(rng):
    row = rng.normal(size=8)
    x = np.stack([row, row, -row])
    corr = token_correlation(x)
    assert corr[0, 1] == pytest.approx(1.0)
    assert corr[0, 2] == pytest.approx(-1.0)
    assert np.allclose(np.diag(corr), 1.0)
    assert np.array_equal(corr, corr.T)


def test_token_correlation_zero_variance_rows():
    x = np.array([[1.0, 1.0, 1.0], [1.0, 2.0, 3.0]])
    corr = token_correlation(x)
    assert corr[0, 1] == 0.0 and corr[1, 0] == 0.0
    assert corr[0, 0] == 1.0


def test_token_correlation_matches_direct_formula(rng):
    x = rng.normal(size=(5, 16))
    corr = token_correlation(x)
    for i in range(5):
        for j in range(5):
            xi, xj = x[i] - x[i].mean(), x[j] - x[j].mean()
            want = (xi @ xj) / np.sqrt((xi @ xi) * (xj @ xj))
            assert abs(corr[i, j] - want) < 1e-10

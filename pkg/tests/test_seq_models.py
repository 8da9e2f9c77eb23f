import numpy as np
import pytest

from symint import autodiff as ad
from symint.autodiff import ShapeMismatch, Tensor
from symint.datagen import corpus_vocab
from symint.notation import EOS_ID, SCHEME_PAIRS, SchemePair, Vocab
from symint.seq_models import (
    LSTM_DESK, TRANSFORMER_DESK, TRANSFORMER_FULL, LstmConfig, MultiHeadAttention, attention, beam_decode,
    build_model, greedy_decode, lstm_forward, make_batch, transformer_forward,
)
from symint.training import OPT_DESK, OptimizerConfig, token_accuracy, train_fold

VARIANTS = [(k, sp) for k in ("lstm", "transformer") for sp in SCHEME_PAIRS]
CFG = {"lstm": LSTM_DESK, "transformer": TRANSFORMER_DESK}


def variant_id(v):
    return f"{v[0]}-{v[1].name}"


def model_for(kind, sp, pairs, seed=0):
    return build_model(kind, CFG[kind], sp, corpus_vocab(pairs, sp.format), seed)


# -- single-head attention -------------------------------------------------


def test_single_key_gets_all_weight():
    V = np.array([[3.0, -1.0, 2.0]])
    ctx, amap = attention(np.random.default_rng(0).normal(size=(4, 2)), np.ones((1, 2)), V)
    assert np.array_equal(amap.weights, np.ones((4, 1)))
    assert np.allclose(ctx.data, np.repeat(V, 4, axis=0), rtol=0, atol=1e-15)


def test_zero_query_is_uniform():
    rng = np.random.default_rng(1)
    K, V = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    ctx, amap = attention(np.zeros((2, 3)), K, V)
    assert np.allclose(amap.weights, 0.2, rtol=0, atol=1e-15)
    assert np.allclose(ctx.data, V.mean(axis=0), rtol=0, atol=1e-12)


def test_two_by_two_against_hand_oracle():
    Q = np.array([[0.3, -1.2], [2.0, 0.5]])
    K = np.array([[1.0, 0.4], [-0.7, 0.9]])
    V = np.array([[0.1, 2.0], [-3.0, 1.5]])
    want_w = np.zeros((2, 2))
    for i in range(2):
        s = [sum(Q[i, k] * K[j, k] for k in range(2)) / np.sqrt(2.0) for j in range(2)]
        z = [np.exp(v - max(s)) for v in s]
        want_w[i] = [v / sum(z) for v in z]
    want_ctx = np.array([[sum(want_w[i, j] * V[j, c] for j in range(2)) for c in range(2)] for i in range(2)])
    ctx, amap = attention(Q, K, V, d_k=2)
    assert np.max(np.abs(amap.weights - want_w)) <= 1e-12
    assert np.max(np.abs(ctx.data - want_ctx)) <= 1e-12


@pytest.mark.parametrize("shapes", [((2, 3), (4, 2), (4, 2)), ((2, 3), (4, 3), (5, 2)), ((3,), (4, 3), (4, 3))])
def test_attention_shape_mismatch(shapes):
    q, k, v = (np.zeros(s) for s in shapes)
    with pytest.raises(ShapeMismatch):
        attention(q, k, v)


def test_attention_d_k_checked():
    with pytest.raises(ShapeMismatch):
        attention(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros((4, 2)), d_k=4)


# -- multi-head ------------------------------------------------------------


def test_one_head_is_attention_then_output_projection():
    rng = np.random.default_rng(2)
    Q, K, V = rng.normal(size=(3, 6)), rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    mha = MultiHeadAttention(6, 1, seed=3)
    P = {k.split(".")[1]: p.data for k, p in mha.params.items()}
    out, maps = mha(Q, K, V)
    ctx, amap = attention(Q @ P["wq"], K @ P["wk"], V @ P["wv"])
    assert len(maps) == 1
    assert np.allclose(maps[0].weights, amap.weights, rtol=0, atol=1e-14)
    assert np.allclose(out.data, ctx.data @ P["wo"], rtol=0, atol=1e-12)


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_multi_head_output_shape(heads):
    rng = np.random.default_rng(heads)
    out, maps = MultiHeadAttention(8, heads, seed=0)(rng.normal(size=(3, 8)), rng.normal(size=(7, 8)))
    assert out.shape == (3, 8)
    assert len(maps) == heads
    assert all(m.shape == (3, 7) and m.check() for m in maps)


def test_multi_head_explicit_head_dims():
    mha = MultiHeadAttention(6, 4, d_k=5, d_v=3)
    assert mha.params["mha.wq"].shape == (6, 20) and mha.params["mha.wo"].shape == (12, 6)
    out, _ = mha(np.ones((2, 6)), np.ones((3, 6)))
    assert out.shape == (2, 6)


def test_multi_head_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        MultiHeadAttention(8, 2)(np.zeros((3, 8)), np.zeros((4, 6)))


def test_multi_head_gradient():
    rng = np.random.default_rng(4)
    mha = MultiHeadAttention(6, 2, seed=5)
    Q = ad.parameter(rng.normal(size=(3, 6)), "Q")
    K = ad.parameter(rng.normal(size=(4, 6)), "K")
    w = Tensor(rng.normal(size=(3, 6)))
    rep = ad.grad_check(lambda: ad.sum(ad.mul(mha(Q, K)[0], w)), dict(mha.params, Q=Q, K=K), h=1e-6)
    assert rep["passed"], rep["errors"]


# -- forward passes --------------------------------------------------------


@pytest.mark.parametrize("sp", SCHEME_PAIRS, ids=lambda s: s.name)
def test_step_distributions_sum_to_one(subset100, sp):
    pairs = subset100[:6]
    for kind, fwd in (("lstm", lstm_forward), ("transformer", transformer_forward)):
        m = model_for(kind, sp, subset100)
        b = m.batch(pairs)
        dist, maps = fwd(m, b)
        slots = (3,) if m.subtree else ()
        assert dist.shape == b.tgt_out.shape[:2] + slots + (len(m.vocab),)
        assert np.all(np.abs(dist.sum(axis=-1) - 1.0) <= 1e-12)
        assert maps


def test_subtree_head_splits_into_three_vocab_blocks():
    vocab = Vocab(["EOS", "PAD", "SOS", "x", "n", "cos", "sin", "times", "plus", "1"])
    m = build_model("lstm", LstmConfig(layer_count=1, hidden_dim=8), SchemePair.parse("subtree-polish"), vocab, 0)
    src = [np.array([[5, 3, 0], [3, 0, 0]])]
    tgt = [np.array([[6, 3, 0], [3, 0, 0]])]
    logits, _ = m.logits(make_batch(src, tgt, True))
    assert logits.shape == (1, 2, 3, 10)
    assert m.params["dec.emb"].shape[1] * 3 == m.embed("dec.emb", src[0][None]).shape[-1]


def test_lstm_hidden_split_odd_width():
    pairs_vocab = Vocab(["EOS", "PAD", "SOS", "x"])
    m = build_model("lstm", LstmConfig(layer_count=1, hidden_dim=7), SchemePair.parse("string-polish"), pairs_vocab)
    b = make_batch([np.array([3, 3])], [np.array([3])], False)
    enc, _ = m.encode(b.src, b.src_mask)
    assert enc.shape == (1, 2, 7)


def test_decoder_causal_mask_is_exact(subset100):
    for sp in SCHEME_PAIRS:
        m = model_for("transformer", sp, subset100)
        _, maps = m.logits(m.batch(subset100[:4]), collect=True)
        for w in maps["decoder_self"]:
            L = w.shape[-1]
            future = np.triu(np.ones((L, L), dtype=bool), k=1)
            assert np.all(w[..., future] == 0.0)


def test_full_scale_encoder_has_48_maps(subset100):
    sp = SchemePair.parse("string-polish")
    m = build_model("transformer", TRANSFORMER_FULL, sp, corpus_vocab(subset100, sp.format), 0)
    b = m.batch(subset100[:2])
    maps = m.attention_maps(b, 1)
    assert len(maps) == 48
    assert {(a.layer, a.head) for a in maps} == {(i, j) for i in range(6) for j in range(8)}
    ls = int(b.src_mask[1].sum())
    assert all(a.shape == (ls, ls) and a.check(1e-9) for a in maps)


@pytest.mark.parametrize("v", VARIANTS, ids=variant_id)
def test_attention_maps_row_stochastic(subset100, v):
    kind, sp = v
    m = model_for(kind, sp, subset100)
    b = m.batch(subset100[10:14])
    kinds = {} if kind == "lstm" else {"kinds": ("encoder", "decoder_self", "cross")}
    for idx in range(4):
        maps = m.attention_maps(b, idx, **kinds)
        assert maps and all(a.check(1e-9) for a in maps)
        assert all((a.weights >= 0).all() for a in maps)


# -- decoding --------------------------------------------------------------


class CopyModel:
    """Decoder stub whose step puts all mass on the next source token, then EOS."""

    subtree = False
    max_output_len = 64

    def __init__(self, vocab):
        self.vocab = vocab
        self.scheme_pair = SchemePair.parse("string-polish")

    def init_decode(self, src, src_mask):
        return (np.asarray(src), np.asarray(src_mask), 0)

    def step(self, state, prev):
        src, mask, t = state
        logp = np.full((len(src), len(self.vocab)), -50.0)
        for r in range(len(src)):
            tok = src[r, t] if t < src.shape[1] and mask[r, t] else EOS_ID
            logp[r, tok] = 0.0
        logp -= np.log(np.exp(logp).sum(axis=-1, keepdims=True))
        return logp, (src, mask, t + 1)

    def reorder(self, state, idx):
        src, mask, t = state
        return (src[idx], mask[idx], t)


def test_copy_model_reproduces_input(subset100):
    sp = SchemePair.parse("string-polish")
    vocab = corpus_vocab(subset100, sp.format)
    model = CopyModel(vocab)
    probe = build_model("lstm", LSTM_DESK, sp, vocab)
    srcs = [probe.src_ids(p.integrand) for p in subset100[:30]]
    for p, r in zip(subset100[:30], greedy_decode(model, srcs)):
        assert r.ok and r.expr == p.integrand
    for p, s in zip(subset100[:5], srcs[:5]):
        for width in (1, 3):
            assert beam_decode(model, s, width).expr == p.integrand


def test_copy_model_max_len_exceeded(subset100):
    vocab = corpus_vocab(subset100, "string")
    probe = build_model("lstm", LSTM_DESK, SchemePair.parse("string-polish"), vocab)
    long_src = probe.src_ids(max((p.integrand for p in subset100), key=lambda e: e.size()))
    r = greedy_decode(CopyModel(vocab), [long_src], max_len=2)[0]
    assert not r.ok and r.error == "MaxLenExceeded"


@pytest.mark.parametrize("v", VARIANTS, ids=variant_id)
def test_width_one_beam_equals_greedy(subset100, v):
    kind, sp = v
    m = model_for(kind, sp, subset100, seed=3)
    rng = np.random.default_rng(3)
    for p in m.params.values():
        p.data = p.data + rng.normal(scale=0.3, size=p.shape)
    srcs = [m.src_ids(p.integrand) for p in subset100[:6]]
    greedy = greedy_decode(m, srcs, max_len=12)
    for s, g in zip(srcs, greedy):
        b = beam_decode(m, s, 1, max_len=12)
        assert b.tokens == g.tokens and b.error == g.error


@pytest.mark.parametrize("sp", [p for p in SCHEME_PAIRS if p.format == "subtree"], ids=lambda s: s.name)
def test_subtree_outputs_come_in_triples(subset100, sp):
    for kind in ("lstm", "transformer"):
        m = model_for(kind, sp, subset100, seed=1)
        results = m.integrate_batch([p.integrand for p in subset100[:10]], max_len=10)
        for r in results:
            if r.tokens is not None:
                assert len(r.tokens) % 3 == 0


def test_inference_is_deterministic(subset100):
    for kind, sp in VARIANTS:
        m = model_for(kind, sp, subset100)
        f = [p.integrand for p in subset100[:5]]
        a, b = m.integrate_batch(f, max_len=10), m.integrate_batch(f, max_len=10)
        assert a == b
        d1, d2 = m.distributions(m.batch(subset100[:5])), m.distributions(m.batch(subset100[:5]))
        assert d1.tobytes() == d2.tobytes()


def test_single_pair_overfit(subset100):
    pair = [subset100[7]]
    m = model_for("lstm", SchemePair.parse("string-polish"), subset100)
    opt = OptimizerConfig(lr=3e-3, clip_norm=5.0, batch_size=1)
    res = train_fold(m, pair, [], opt, 300, seed=0, stop_token_accuracy=1.0)
    assert len(res.history) <= 300
    assert token_accuracy(m, pair) == 1.0


@pytest.mark.slow
def test_twenty_pair_overfit_reproduces_primitives(subset100):
    pairs = subset100[:20]
    m = model_for("lstm", SchemePair.parse("string-polish"), subset100)
    train_fold(m, pairs, [], OPT_DESK, 300, seed=0, stop_token_accuracy=1.0)
    results = m.integrate_batch([p.integrand for p in pairs])
    for p, r in zip(pairs, results):
        assert r.ok and r.expr == p.primitive

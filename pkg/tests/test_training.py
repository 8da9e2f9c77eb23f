import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symint.autodiff import ShapeMismatch
from symint.checkpoint import Checkpoint, ChecksumMismatch, load_checkpoint, save_checkpoint
from symint.datagen import corpus_vocab, split_corpus
from symint.evaluation import correct_answer_rate
from symint.notation import SchemePair
from symint.seq_models import LSTM_DESK, TRANSFORMER_DESK, LstmConfig, build_model
from symint.training import (
    OPT_DESK, Adam, DivergedLoss, LossBatch, ModelSpec, OptimizerConfig, adam_step, clip_by_global_norm,
    cross_validate, softmax_cross_entropy, train_fold,
)

SP = SchemePair.parse("string-polish")


def loop_loss(X, T):
    m, n = len(X), len(X[0])
    total = 0.0
    for i in range(m):
        top = max(X[i])
        z = sum(math.exp(X[i][j] - top) for j in range(n))
        for j in range(n):
            if T[i][j]:
                total -= T[i][j] * (X[i][j] - top - math.log(z))
    return total / m


# -- loss ------------------------------------------------------------------


def test_uniform_binary_loss():
    assert abs(softmax_cross_entropy(LossBatch(np.zeros((1, 2)), np.array([[1.0, 0.0]]))) - math.log(2)) <= 1e-12


def test_saturated_loss():
    loss = softmax_cross_entropy(LossBatch(np.array([[40.0, -40.0]]), np.array([[1.0, 0.0]])))
    assert 0.0 <= loss < 1e-12


def test_two_row_loss_matches_loop():
    rng = np.random.default_rng(0)
    X = rng.normal(scale=3, size=(2, 5))
    T = np.eye(5)[[1, 4]]
    assert abs(softmax_cross_entropy(LossBatch(X, T)) - loop_loss(X.tolist(), T.tolist())) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(2, 9), st.integers(0, 2 ** 32 - 1))
def test_loss_matches_loop_and_is_nonnegative(m, n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(scale=10, size=(m, n))
    T = np.eye(n)[rng.integers(0, n, m)]
    got = softmax_cross_entropy(LossBatch(X, T))
    assert got >= 0
    assert abs(got - loop_loss(X.tolist(), T.tolist())) <= 1e-12 * max(1.0, got)


def test_loss_batch_shapes():
    with pytest.raises(ShapeMismatch):
        LossBatch(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ShapeMismatch):
        LossBatch(np.zeros(3), np.zeros(3))


# -- optimizer -------------------------------------------------------------


def test_zero_gradient_fixed_point():
    params = {"a": np.array([1.0, -2.0]), "b": np.ones((2, 2))}
    cfg = OptimizerConfig(lr=0.1)
    state = {}
    out = params
    for t in range(1, 6):
        out = adam_step(out, {k: np.zeros_like(v) for k, v in params.items()}, cfg, state, t)
    for k in params:
        assert np.array_equal(out[k], params[k])


def test_clipping_scales_to_ceiling():
    grads = {"a": np.array([6.0, 0.0]), "b": np.array([[0.0, 8.0]])}
    clipped, norm = clip_by_global_norm(grads, 5.0)
    assert norm == 10.0
    assert np.array_equal(clipped["a"], [3.0, 0.0]) and np.array_equal(clipped["b"], [[0.0, 4.0]])
    same, _ = clip_by_global_norm(grads, 20.0)
    assert same["a"] is grads["a"]


def test_clipped_adam_matches_half_gradient():
    # Adam's first step is scale-invariant, so compare the moment buffers instead
    g = {"w": np.array([6.0, 8.0])}
    s1, s2 = {}, {}
    adam_step({"w": np.zeros(2)}, g, OptimizerConfig(clip_norm=5.0), s1, 1)
    adam_step({"w": np.zeros(2)}, {"w": g["w"] * 0.5}, OptimizerConfig(clip_norm=100.0), s2, 1)
    assert np.array_equal(s1["m"]["w"], s2["m"]["w"]) and np.array_equal(s1["v"]["w"], s2["v"]["w"])


def test_adam_converges_on_quadratic():
    target = np.array([1.5, -0.5, 3.0])
    A = np.diag([1.0, 4.0, 0.5])
    theta = {"t": np.zeros(3)}
    cfg, state = OptimizerConfig(lr=0.1, clip_norm=100.0), {}
    for step in range(1, 201):
        grad = {"t": 2 * A @ (theta["t"] - target)}
        theta = adam_step(theta, grad, cfg, state, step)
    assert np.max(np.abs(theta["t"] - target)) < 1e-3


def test_decoupled_weight_decay():
    cfg = OptimizerConfig(lr=0.1, weight_decay=0.5)
    out = adam_step({"w": np.array([2.0])}, {"w": np.zeros(1)}, cfg, {}, 1)
    assert out["w"][0] == pytest.approx(2.0 * (1 - 0.05), abs=1e-15)


def test_adam_wrapper_updates_tensors():
    from symint.autodiff import parameter
    p = parameter(np.array([1.0]))
    p.grad = np.array([1.0])
    Adam({"p": p}, OptimizerConfig(lr=0.01)).step()
    assert p.data[0] == pytest.approx(0.99, abs=1e-9) and p.grad is None


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(lr=0)
    with pytest.raises(ValueError):
        OptimizerConfig(clip_norm=-1)


# -- training loop ---------------------------------------------------------


def small_model(pairs, seed=0, kind="lstm"):
    cfg = LstmConfig(layer_count=1, hidden_dim=16) if kind == "lstm" else TRANSFORMER_DESK
    return build_model(kind, cfg, SP, corpus_vocab(pairs, "string"), seed)


def test_zero_epochs_returns_initial_checkpoint(subset100):
    m = small_model(subset100)
    before = {k: v.copy() for k, v in m.state_dict().items()}
    res = train_fold(m, subset100[:10], subset100[10:20], OPT_DESK, 0)
    assert res.history == [] and res.checkpoint.epoch == 0
    assert res.checkpoint.val_rate == correct_answer_rate(m, subset100[10:20])
    assert all(np.array_equal(res.checkpoint.arrays[k], before[k]) for k in before)


def test_same_seed_same_loss_curve(subset100, tmp_path):
    logs = []
    for run in range(2):
        path = tmp_path / f"log{run}.csv"
        res = train_fold(small_model(subset100), subset100[:20], subset100[20:24], OPT_DESK, 3, seed=9,
                         log_path=path)
        logs.append(path.read_bytes())
        assert len(res.history) == 3
    assert logs[0] == logs[1]
    assert logs[0].startswith(b"epoch,loss,token_accuracy,val_rate\n")


def test_best_checkpoint_tracks_validation(subset100):
    res = train_fold(small_model(subset100), subset100[:20], subset100[:5], OPT_DESK, 4, seed=1)
    rates = [r.val_rate for r in res.history]
    assert res.checkpoint.val_rate == max(rates + [res.checkpoint.val_rate])


def test_diverged_loss(subset100):
    m = small_model(subset100)
    m.params["out.b"].data[:] = np.nan
    with pytest.raises(DivergedLoss):
        train_fold(m, subset100[:5], [], OPT_DESK, 1)


def test_cross_validation_partition(corpus3):
    pairs = sorted(corpus3, key=lambda p: p.id)[:60]
    plan = split_corpus(pairs, seed=2)
    spec = ModelSpec("lstm", LstmConfig(layer_count=1, hidden_dim=8), "string-polish",
                     tuple(corpus_vocab(corpus3, "string").tokens))
    best, reports = cross_validate(spec, pairs, plan, OPT_DESK, epochs=1, seed=0)
    assert len(reports) == 10
    seen = [i for r in reports for i in r.val_ids]
    assert sorted(seen) == sorted(plan.train_ids)
    assert best.val_rate == max(r.val_rate for r in reports)


def test_two_fold_smoke(corpus3):
    pairs = sorted(corpus3, key=lambda p: p.id)[:60]
    plan = split_corpus(pairs, seed=3)
    spec = ModelSpec("lstm", LSTM_DESK, "string-polish", tuple(corpus_vocab(corpus3, "string").tokens))
    best, reports = cross_validate(spec, pairs, plan, OPT_DESK, epochs=2, seed=0, folds=[0, 1])
    assert [r.fold for r in reports] == [0, 1]
    assert best.meta["fold"] in (0, 1)
    assert best.build().name == "lstm-string-polish"


# -- checkpoints -----------------------------------------------------------


@pytest.mark.parametrize("kind", ["lstm", "transformer"])
def test_checkpoint_round_trip_bit_identical(subset100, tmp_path, kind):
    m = small_model(subset100, seed=4, kind=kind)
    rng = np.random.default_rng(0)
    for p in m.params.values():
        p.data = p.data + rng.normal(scale=0.2, size=p.shape)
    batch = m.batch(subset100[:5])
    before = m.distributions(batch)
    decoded = m.integrate_batch([p.integrand for p in subset100[:5]], max_len=12)
    path = tmp_path / "m.ckpt"
    save_checkpoint(Checkpoint.from_model(m, epoch=3, val_rate=12.5, manifest_hash="abc"), path)
    ck = load_checkpoint(path)
    m2 = ck.build()
    assert (ck.epoch, ck.val_rate, ck.manifest_hash) == (3, 12.5, "abc")
    assert m2.distributions(batch).tobytes() == before.tobytes()
    assert m2.integrate_batch([p.integrand for p in subset100[:5]], max_len=12) == decoded


def test_load_save_byte_identical(subset100, tmp_path):
    m = small_model(subset100)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(Checkpoint.from_model(m, 1, None, "h", meta={"fold": 3}), a)
    save_checkpoint(load_checkpoint(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_corrupted_payload(subset100, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(Checkpoint.from_model(small_model(subset100)), path)
    blob = bytearray(path.read_bytes())
    blob[-5] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumMismatch):
        load_checkpoint(path)


def test_cross_config_load(subset100, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(Checkpoint.from_model(small_model(subset100)), path)
    other = build_model("lstm", LstmConfig(layer_count=1, hidden_dim=12), SP, corpus_vocab(subset100, "string"))
    with pytest.raises(ShapeMismatch):
        load_checkpoint(path, other)
    wrong_kind = small_model(subset100, kind="transformer")
    with pytest.raises(ShapeMismatch):
        load_checkpoint(path, wrong_kind)

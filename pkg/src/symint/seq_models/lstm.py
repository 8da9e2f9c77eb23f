"""Bidirectional-encoder LSTM with additive attention over encoder states."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from .base import Seq2Seq
from .config import LstmConfig
from .layers import NEG_INF, AttentionMap, Batch


def _cell_params(rng, prefix, n_in, n_hid):
    lim = 1.0 / math.sqrt(n_hid)
    b = np.zeros(4 * n_hid)
    b[n_hid:2 * n_hid] = 1.0  # forget gate starts open
    return {
        f"{prefix}.w_ih": rng.uniform(-lim, lim, (n_in, 4 * n_hid)),
        f"{prefix}.w_hh": rng.uniform(-lim, lim, (n_hid, 4 * n_hid)),
        f"{prefix}.b": b,
    }


class LstmState:
    __slots__ = ("enc", "keys", "src_mask", "h", "c")

    def __init__(self, enc, keys, src_mask, h, c):
        self.enc, self.keys, self.src_mask, self.h, self.c = enc, keys, src_mask, h, c


class LstmSeq2Seq(Seq2Seq):
    kind = "lstm"

    def __init__(self, cfg: LstmConfig, scheme_pair, vocab, seed: int = 0):
        super().__init__(cfg, scheme_pair, vocab, seed)

    def _dims(self):
        H = self.cfg.hidden_dim
        return H, H - H // 2, H // 2, H * self.slots

    def _init_params(self, rng) -> dict:
        H, hf, hb, d_in = self._dims()
        V, L = self.V, self.cfg.layer_count
        p = {
            "enc.emb": rng.normal(0.0, 0.1, (V, H)),
            "dec.emb": rng.normal(0.0, 0.1, (V, H)),
        }
        for layer in range(L):
            n_in = d_in if layer == 0 else H
            p.update(_cell_params(rng, f"enc.l{layer}.f", n_in, hf))
            p.update(_cell_params(rng, f"enc.l{layer}.b", n_in, hb))
        lim = 1.0 / math.sqrt(H)
        p["att.w_q"] = rng.uniform(-lim, lim, (H, H))
        p["att.w_k"] = rng.uniform(-lim, lim, (H, H))
        p["att.v"] = rng.uniform(-lim, lim, (H, 1))
        for layer in range(L):
            p.update(_cell_params(rng, f"dec.l{layer}", d_in + H if layer == 0 else H, H))
        p["out.w"] = rng.uniform(-lim, lim, (2 * H, self.V * self.slots))
        p["out.b"] = np.zeros(self.V * self.slots)
        return p

    # -- encoder -----------------------------------------------------------

    def _run_direction(self, xs, mask, prefix, n_hid, reverse):
        P = self.params
        B = mask.shape[0]
        h = ad.Tensor(np.zeros((B, n_hid)))
        c = ad.Tensor(np.zeros((B, n_hid)))
        steps = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
        outs = [None] * len(xs)
        for t in steps:
            h2, c2 = ad.lstm_cell(xs[t], h, c, None, P[f"{prefix}.w_hh"], P[f"{prefix}.b"])
            m = mask[:, t:t + 1]
            h, c = ad.where(m, h2, h), ad.where(m, c2, c)
            outs[t] = h
        return outs, h, c

    def encode(self, src, src_mask, train=False, key=None):
        """Encoder states ``(B, Ls, H)`` plus per-layer final ``(h, c)`` for the decoder."""
        P, cfg = self.params, self.cfg
        _, hf, hb, _ = self._dims()
        x = ad.dropout(self.embed("enc.emb", src), cfg.dropout, train, key)
        finals = []
        for layer in range(cfg.layer_count):
            if layer:
                x = ad.dropout(x, cfg.dropout, train, key)
            # input projections for every time step at once; the cell adds the bias
            xf = ad.unstack(ad.matmul(x, P[f"enc.l{layer}.f.w_ih"]), 1)
            xb = ad.unstack(ad.matmul(x, P[f"enc.l{layer}.b.w_ih"]), 1)
            of, hF, cF = self._run_direction(xf, src_mask, f"enc.l{layer}.f", hf, False)
            ob, hB, cB = self._run_direction(xb, src_mask, f"enc.l{layer}.b", hb, True)
            x = ad.stack([ad.concat([a, b], -1) for a, b in zip(of, ob)], 1)
            finals.append((ad.concat([hF, hB], -1), ad.concat([cF, cB], -1)))
        return x, finals

    # -- decoder -----------------------------------------------------------

    def _attend(self, h_top, enc, keys, src_mask):
        P = self.params
        B, Ls, H = enc.shape
        q = ad.reshape(ad.matmul(h_top, P["att.w_q"]), (B, 1, H))
        e = ad.tanh(ad.add(keys, q))
        scores = ad.reshape(ad.matmul(e, P["att.v"]), (B, Ls))
        alpha = ad.softmax(ad.masked_fill(scores, ~src_mask, NEG_INF), -1)
        ctx = ad.reshape(ad.matmul(ad.reshape(alpha, (B, 1, Ls)), enc), (B, H))
        return ctx, alpha

    def _dec_step(self, emb_t, h, c, enc, keys, src_mask, train=False, key=None):
        P, cfg = self.params, self.cfg
        ctx, alpha = self._attend(h[-1], enc, keys, src_mask)
        x = ad.concat([emb_t, ctx], -1)
        h2, c2 = [], []
        for layer in range(cfg.layer_count):
            if layer:
                x = ad.dropout(x, cfg.dropout, train, key)
            hn, cn = ad.lstm_cell(x, h[layer], c[layer], P[f"dec.l{layer}.w_ih"],
                                  P[f"dec.l{layer}.w_hh"], P[f"dec.l{layer}.b"])
            h2.append(hn)
            c2.append(cn)
            x = hn
        feat = ad.concat([x, ctx], -1)
        return feat, h2, c2, alpha

    def logits(self, batch: Batch, train: bool = False, key=None, collect: bool = False):
        cfg = self.cfg
        enc, finals = self.encode(batch.src, batch.src_mask, train, key)
        keys = ad.matmul(enc, self.params["att.w_k"])
        h = [f[0] for f in finals]
        c = [f[1] for f in finals]
        embs = ad.unstack(ad.dropout(self.embed("dec.emb", batch.tgt_in), cfg.dropout, train, key), 1)
        feats, alphas = [], []
        for emb_t in embs:
            feat, h, c, alpha = self._dec_step(emb_t, h, c, enc, keys, batch.src_mask, train, key)
            feats.append(feat)
            alphas.append(alpha.data)
        feats = ad.dropout(ad.stack(feats, 1), cfg.dropout, train, key)
        maps = {"decoder": np.stack(alphas, 1)} if collect else {}
        return self.head_logits(feats), maps

    def attention_maps(self, batch: Batch, index: int = 0) -> list:
        """Decoder-over-encoder map for one batch row, cropped to its real lengths."""
        _, maps = self.logits(batch, collect=True)
        lt = int(batch.tgt_mask[index].sum())
        ls = int(batch.src_mask[index].sum())
        return [AttentionMap(maps["decoder"][index, :lt, :ls], model=self.name, kind="decoder")]

    # -- incremental decoding ----------------------------------------------

    def init_decode(self, src, src_mask) -> LstmState:
        enc, finals = self.encode(src, src_mask)
        keys = ad.matmul(enc, self.params["att.w_k"])
        return LstmState(enc, keys, src_mask, [f[0] for f in finals], [f[1] for f in finals])

    def step(self, state: LstmState, prev):
        emb = self.embed("dec.emb", np.asarray(prev))
        feat, h, c, _ = self._dec_step(emb, state.h, state.c, state.enc, state.keys, state.src_mask)
        z = self.head_logits(ad.reshape(feat, (feat.shape[0], 1, feat.shape[1]))).data[:, 0]
        z = z - z.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        return logp, LstmState(state.enc, state.keys, state.src_mask, h, c)

    def reorder(self, state: LstmState, idx) -> LstmState:
        idx = np.asarray(idx)
        pick = lambda t: ad.Tensor(t.data[idx])  # noqa: E731
        return LstmState(pick(state.enc), pick(state.keys), state.src_mask[idx],
                         [pick(t) for t in state.h], [pick(t) for t in state.c])

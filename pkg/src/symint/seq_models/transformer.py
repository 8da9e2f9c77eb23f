"""Post-norm Transformer encoder-decoder with sinusoidal positions."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from .base import Seq2Seq
from .config import TransformerConfig
from .layers import AttentionMap, Batch, init_uniform, multi_head, multi_head_params, sinusoid_table


def _ln(p, prefix, d):
    p[f"{prefix}.g"] = np.ones(d)
    p[f"{prefix}.b"] = np.zeros(d)


class TransformerState:
    __slots__ = ("memory", "src_mask", "prefix")

    def __init__(self, memory, src_mask, prefix):
        self.memory, self.src_mask, self.prefix = memory, src_mask, prefix


class TransformerSeq2Seq(Seq2Seq):
    kind = "transformer"

    def __init__(self, cfg: TransformerConfig, scheme_pair, vocab, seed: int = 0):
        self._pe = sinusoid_table(cfg.max_len, cfg.model_dim)
        super().__init__(cfg, scheme_pair, vocab, seed)

    @property
    def token_dim(self) -> int:
        # subtree triples are concatenated; when 3 does not divide the model width
        # the concatenation is rounded up and projected back down
        D = self.cfg.model_dim
        return D if not self.subtree else -(-D // 3)

    @property
    def projects_input(self) -> bool:
        return self.subtree and 3 * self.token_dim != self.cfg.model_dim

    def _init_params(self, rng) -> dict:
        cfg = self.cfg
        D, F, h = cfg.model_dim, cfg.d_ff, cfg.heads
        E = self.token_dim
        p = {
            "enc.emb": rng.normal(0.0, D ** -0.5, (self.V, E)),
            "dec.emb": rng.normal(0.0, D ** -0.5, (self.V, E)),
        }
        if self.projects_input:
            p["enc.proj"] = init_uniform(rng, (3 * E, D), 3 * E, D)
            p["dec.proj"] = init_uniform(rng, (3 * E, D), 3 * E, D)
        for i in range(cfg.encoder_layers):
            pre = f"enc.l{i}"
            p.update(multi_head_params(rng, f"{pre}.self", D, h, cfg.d_k, cfg.d_v))
            _ln(p, f"{pre}.ln1", D)
            self._ffn(p, rng, f"{pre}.ff", D, F)
            _ln(p, f"{pre}.ln2", D)
        for i in range(cfg.decoder_layers):
            pre = f"dec.l{i}"
            p.update(multi_head_params(rng, f"{pre}.self", D, h, cfg.d_k, cfg.d_v))
            _ln(p, f"{pre}.ln1", D)
            p.update(multi_head_params(rng, f"{pre}.cross", D, h, cfg.d_k, cfg.d_v))
            _ln(p, f"{pre}.ln2", D)
            self._ffn(p, rng, f"{pre}.ff", D, F)
            _ln(p, f"{pre}.ln3", D)
        p["out.w"] = init_uniform(rng, (D, self.V * self.slots), D, self.V * self.slots)
        p["out.b"] = np.zeros(self.V * self.slots)
        return p

    @staticmethod
    def _ffn(p, rng, prefix, D, F):
        p[f"{prefix}.w1"] = init_uniform(rng, (D, F), D, F)
        p[f"{prefix}.b1"] = np.zeros(F)
        p[f"{prefix}.w2"] = init_uniform(rng, (F, D), F, D)
        p[f"{prefix}.b2"] = np.zeros(D)

    # -- blocks ------------------------------------------------------------

    def _input(self, side, ids, train, key):
        P, cfg = self.params, self.cfg
        L = ids.shape[1]
        if L > cfg.max_len:
            raise ad.ShapeMismatch(f"sequence of length {L} exceeds max_len {cfg.max_len}")
        x = self.embed(f"{side}.emb", ids)
        if self.projects_input:
            x = ad.matmul(x, P[f"{side}.proj"])
        x = ad.add(ad.scale(x, math.sqrt(cfg.model_dim)), self._pe[:L])
        return ad.dropout(x, cfg.dropout, train, key)

    def _residual(self, x, y, ln, train, key):
        P = self.params
        y = ad.dropout(y, self.cfg.dropout, train, key)
        return ad.layer_norm(ad.add(x, y), P[f"{ln}.g"], P[f"{ln}.b"])

    def _ff(self, x, prefix):
        P = self.params
        hid = ad.relu(ad.add(ad.matmul(x, P[f"{prefix}.w1"]), P[f"{prefix}.b1"]))
        return ad.add(ad.matmul(hid, P[f"{prefix}.w2"]), P[f"{prefix}.b2"])

    def encode(self, src, src_mask, train=False, key=None, maps=None):
        P, cfg = self.params, self.cfg
        x = self._input("enc", src, train, key)
        pad = ~src_mask[:, None, None, :]
        for i in range(cfg.encoder_layers):
            a, w = multi_head(x, x, x, P, f"enc.l{i}.self", cfg.heads, pad)
            if maps is not None:
                maps.setdefault("encoder", []).append(w.data)
            x = self._residual(x, a, f"enc.l{i}.ln1", train, key)
            x = self._residual(x, self._ff(x, f"enc.l{i}.ff"), f"enc.l{i}.ln2", train, key)
        return x

    def decode(self, tgt_in, memory, src_mask, train=False, key=None, maps=None):
        P, cfg = self.params, self.cfg
        y = self._input("dec", tgt_in, train, key)
        Lt = tgt_in.shape[1]
        causal = np.triu(np.ones((Lt, Lt), dtype=bool), 1)[None, None]
        pad = ~src_mask[:, None, None, :]
        for i in range(cfg.decoder_layers):
            a, w_self = multi_head(y, y, y, P, f"dec.l{i}.self", cfg.heads, causal)
            y = self._residual(y, a, f"dec.l{i}.ln1", train, key)
            a, w_cross = multi_head(y, memory, memory, P, f"dec.l{i}.cross", cfg.heads, pad)
            y = self._residual(y, a, f"dec.l{i}.ln2", train, key)
            y = self._residual(y, self._ff(y, f"dec.l{i}.ff"), f"dec.l{i}.ln3", train, key)
            if maps is not None:
                maps.setdefault("decoder_self", []).append(w_self.data)
                maps.setdefault("cross", []).append(w_cross.data)
        return y

    def logits(self, batch: Batch, train: bool = False, key=None, collect: bool = False):
        maps = {} if collect else None
        memory = self.encode(batch.src, batch.src_mask, train, key, maps)
        y = self.decode(batch.tgt_in, memory, batch.src_mask, train, key, maps)
        return self.head_logits(y), (maps or {})

    def attention_maps(self, batch: Batch, index: int = 0, kinds=("encoder",)) -> list:
        """Per-layer, per-head maps for one batch row, cropped to real lengths."""
        _, maps = self.logits(batch, collect=True)
        ls = int(batch.src_mask[index].sum())
        lt = int(batch.tgt_mask[index].sum())
        rows = {"encoder": ls, "decoder_self": lt, "cross": lt}
        cols = {"encoder": ls, "decoder_self": lt, "cross": ls}
        out = []
        for kind in kinds:
            for layer, w in enumerate(maps[kind]):
                for head in range(w.shape[1]):
                    out.append(AttentionMap(w[index, head, :rows[kind], :cols[kind]], model=self.name,
                                            kind=kind, layer=layer, head=head))
        return out

    # -- incremental decoding ----------------------------------------------

    def init_decode(self, src, src_mask) -> TransformerState:
        memory = self.encode(src, src_mask)
        shape = (src.shape[0], 0, 3) if self.subtree else (src.shape[0], 0)
        return TransformerState(memory, src_mask, np.zeros(shape, dtype=np.int64))

    def step(self, state: TransformerState, prev):
        prev = np.asarray(prev, dtype=np.int64)
        prefix = np.concatenate([state.prefix, prev[:, None]], axis=1)
        y = self.decode(prefix, state.memory, state.src_mask)
        last = ad.Tensor(y.data[:, -1:])
        z = self.head_logits(last).data[:, 0]
        z = z - z.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        return logp, TransformerState(state.memory, state.src_mask, prefix)

    def reorder(self, state: TransformerState, idx) -> TransformerState:
        idx = np.asarray(idx)
        return TransformerState(ad.Tensor(state.memory.data[idx]), state.src_mask[idx], state.prefix[idx])

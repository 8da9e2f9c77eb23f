"""Parameter handling, losses and integration shared by both architectures."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import ShapeMismatch
from ..notation import SUBTREE, DecodeError, SchemePair, Vocab, encode, ids_of
from .layers import Batch, make_batch


class Seq2Seq:
    """Encoder-decoder over one input/output scheme pair.

    Subclasses define ``kind``, ``_init_params(rng)``, ``logits(batch, ...)``,
    ``init_decode(src, src_mask)``, ``step(state, prev)`` and ``reorder(state, idx)``.
    """

    kind = ""

    def __init__(self, cfg, scheme_pair: SchemePair, vocab: Vocab, seed: int = 0):
        self.cfg = cfg
        self.scheme_pair = scheme_pair
        self.vocab = vocab
        self.seed = seed
        self.subtree = scheme_pair.format == SUBTREE
        self.slots = 3 if self.subtree else 1
        self.V = len(vocab)
        rng = np.random.default_rng(seed)
        self.params = {k: ad.parameter(v, k) for k, v in self._init_params(rng).items()}

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.scheme_pair.name}"

    @property
    def max_output_len(self) -> int:
        return self.cfg.max_output_len

    def _init_params(self, rng) -> dict:
        raise NotImplementedError

    # -- parameters --------------------------------------------------------

    def state_dict(self) -> dict:
        return {k: p.data for k, p in self.params.items()}

    def load_state(self, arrays: dict) -> None:
        if set(arrays) != set(self.params):
            missing = sorted(set(self.params) ^ set(arrays))
            raise ShapeMismatch(f"parameter names differ: {missing[:5]}")
        for k, p in self.params.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != p.shape:
                raise ShapeMismatch(f"{k}: checkpoint {a.shape} vs model {p.shape}")
        for k, p in self.params.items():
            p.data = np.array(arrays[k], dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    # -- data --------------------------------------------------------------

    def src_ids(self, integrand) -> np.ndarray:
        return ids_of(encode(integrand, self.scheme_pair.input), self.vocab)

    def tgt_ids(self, primitive) -> np.ndarray:
        return ids_of(encode(primitive, self.scheme_pair.output), self.vocab)

    def batch(self, pairs) -> Batch:
        return make_batch([self.src_ids(p.integrand) for p in pairs],
                          [self.tgt_ids(p.primitive) for p in pairs], self.subtree)

    def head_logits(self, feats: ad.Tensor) -> ad.Tensor:
        """Project ``(B, L, H)`` features to ``(B, L, V)`` or, for subtrees, ``(B, L, 3, V)``."""
        z = ad.add(ad.matmul(feats, self.params["out.w"]), self.params["out.b"])
        if self.subtree:
            b, l, _ = z.shape
            z = ad.reshape(z, (b, l, 3, self.V))
        return z

    def embed(self, table: str, ids) -> ad.Tensor:
        """Token embeddings; subtree triples are concatenated to width ``3 * d``."""
        e = ad.embedding_lookup(self.params[table], ids)
        if self.subtree:
            e = ad.reshape(e, ids.shape[:-1] + (3 * e.shape[-1],))
        return e

    def loss(self, batch: Batch, train: bool = False, key=None):
        """Mean token cross-entropy and teacher-forced ``(correct, total)`` token counts."""
        logits, _ = self.logits(batch, train=train, key=key)
        mask = batch.tgt_mask if not self.subtree else np.repeat(batch.tgt_mask[..., None], 3, axis=-1)
        targets = ad.one_hot(batch.tgt_out, self.V, mask)
        count = float(mask.sum())
        loss = ad.softmax_cross_entropy(logits, targets, count)
        pred = logits.data.argmax(axis=-1)
        correct = int(((pred == batch.tgt_out) & mask).sum())
        return loss, (correct, int(count))

    def distributions(self, batch: Batch) -> np.ndarray:
        logits, _ = self.logits(batch)
        return ad.softmax_array(logits.data, -1)

    # -- inference ---------------------------------------------------------

    def integrate_batch(self, integrands, max_len: int | None = None, beam_width: int = 1):
        """Decode a primitive for every integrand; failures are reported, never raised."""
        from .decode import DecodeResult, beam_decode, greedy_decode

        srcs, slots, results = [], [], [None] * len(integrands)
        for i, f in enumerate(integrands):
            try:
                srcs.append(self.src_ids(f))
                slots.append(i)
            except DecodeError as exc:
                results[i] = DecodeResult(None, None, exc.kind)
        if srcs:
            if beam_width == 1:
                decoded = greedy_decode(self, srcs, max_len)
            else:
                decoded = [beam_decode(self, s, beam_width, max_len) for s in srcs]
            for i, r in zip(slots, decoded):
                results[i] = r
        return results

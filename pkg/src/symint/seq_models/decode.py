"""Greedy and beam decoding over the incremental ``init_decode``/``step`` interface."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..expr import Expr
from ..notation import EOS_ID, SOS_ID, DecodeError, SubtreeTracker, TokenSeq, decode
from .layers import pad_stack

MAX_LEN_EXCEEDED = "MaxLenExceeded"


@dataclass(frozen=True)
class DecodeResult:
    tokens: TokenSeq | None
    expr: Expr | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.expr is not None


def _finish(model, ids, error=None) -> DecodeResult:
    """Turn emitted ids into a result, parsing them into an expression when possible."""
    if error is not None:
        return DecodeResult(None, None, error)
    toks = TokenSeq(tuple(model.vocab.tokens[int(i)] for i in np.asarray(ids).reshape(-1)),
                    model.scheme_pair.output)
    try:
        return DecodeResult(toks, decode(toks), None)
    except DecodeError as exc:
        return DecodeResult(toks, None, exc.kind)


class _Hyp:
    """Per-sequence bookkeeping of emitted ids and, for subtrees, tree closure."""

    def __init__(self, model):
        self.model = model
        self.ids = []
        self.tracker = SubtreeTracker() if model.subtree else None

    def push(self, choice):
        """Append one step; returns None while open, else ``"done"`` or an error kind."""
        if self.tracker is None:
            if int(choice) == EOS_ID:
                return "done"
            self.ids.append(int(choice))
            return None
        tri = tuple(int(v) for v in choice)
        self.ids.append(tri)
        self.tracker.push(tuple(self.model.vocab.tokens[v] for v in tri))
        if self.tracker.error is not None:
            return self.tracker.error.kind
        return "done" if self.tracker.done else None

    def copy(self):
        h = _Hyp.__new__(_Hyp)
        h.model, h.ids = self.model, list(self.ids)
        if self.tracker is not None:
            h.tracker = SubtreeTracker()
            h.tracker.pending = list(self.tracker.pending)
            h.tracker.error = self.tracker.error
        else:
            h.tracker = None
        return h


def _sos(model, n):
    shape = (n, 3) if model.subtree else (n,)
    return np.full(shape, SOS_ID, dtype=np.int64)


def greedy_decode(model, src_list, max_len: int | None = None) -> list[DecodeResult]:
    """Argmax decoding for a batch of id sequences (per-slot argmax for subtree triples)."""
    max_len = max_len or model.max_output_len
    src, mask = pad_stack([np.asarray(s) for s in src_list])
    state = model.init_decode(src, mask)
    prev = _sos(model, len(src_list))
    hyps = [_Hyp(model) for _ in src_list]
    results = [None] * len(src_list)
    live = list(range(len(src_list)))
    for _ in range(max_len):
        logp, state = model.step(state, prev)
        choice = logp.argmax(axis=-1)
        keep = []
        for row, i in enumerate(live):
            status = hyps[i].push(choice[row])
            if status is None:
                keep.append(row)
            elif status == "done":
                results[i] = _finish(model, hyps[i].ids)
            else:
                results[i] = _finish(model, None, status)
        if not keep:
            break
        if len(keep) != len(live):
            state = model.reorder(state, keep)
        live = [live[r] for r in keep]
        prev = choice[keep]
    for i in live:
        if results[i] is None:
            results[i] = _finish(model, None, MAX_LEN_EXCEEDED)
    return results


def _candidates(logp_row, width, subtree):
    """Top continuations as ``(choice, logprob)``; subtree choices combine per-slot top-k."""
    if not subtree:
        top = np.argsort(-logp_row, kind="stable")[:width]
        return [(int(t), float(logp_row[t])) for t in top]
    tops = [np.argsort(-logp_row[s], kind="stable")[:width] for s in range(3)]
    cands = []
    for a in tops[0]:
        for b in tops[1]:
            for c in tops[2]:
                cands.append(((int(a), int(b), int(c)),
                              float(logp_row[0, a] + logp_row[1, b] + logp_row[2, c])))
    cands.sort(key=lambda t: -t[1])
    return cands[:width]


def beam_decode(model, src, width: int = 1, max_len: int | None = None) -> DecodeResult:
    """Length-normalized beam search for one source sequence; width 1 equals greedy.

    Search ends when the highest raw-score candidate of a step is a closed
    hypothesis (or no hypothesis is left open); the answer is the closed
    hypothesis with the best length-normalized score.
    """
    max_len = max_len or model.max_output_len
    src = np.asarray(src)
    state = model.init_decode(src[None], np.ones((1, len(src)), dtype=bool))
    beams = [(0.0, _Hyp(model))]
    prev = _sos(model, 1)
    finished, last_error = [], MAX_LEN_EXCEEDED
    for _ in range(max_len):
        logp, state = model.step(state, prev)
        pool = []
        for row, (score, hyp) in enumerate(beams):
            for choice, lp in _candidates(logp[row], width, model.subtree):
                pool.append((score + lp, row, choice, hyp))
        pool.sort(key=lambda t: -t[0])
        nxt, top_done = [], False
        for rank, (score, row, choice, hyp) in enumerate(pool):
            if len(nxt) == width:
                break
            h = hyp.copy()
            status = h.push(choice)
            if status is None:
                nxt.append((score, row, choice, h))
            elif status == "done":
                # string outputs also count the EOS step
                finished.append((score / (len(h.ids) + (0 if model.subtree else 1)), h))
                top_done = top_done or rank == 0
            else:
                last_error = status
        # stop once the best-scoring hypothesis has closed
        if not nxt or top_done:
            break
        beams = [(score, h) for score, _, _, h in nxt]
        state = model.reorder(state, [row for _, row, _, _ in nxt])
        prev = np.array([choice for _, _, choice, _ in nxt], dtype=np.int64)
    else:
        last_error = MAX_LEN_EXCEEDED
    if not finished:
        return _finish(model, None, last_error)
    best = max(finished, key=lambda t: t[0])[1]
    return _finish(model, best.ids)

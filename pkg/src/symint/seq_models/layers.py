"""Attention blocks, attention maps and batch assembly shared by both model families."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ShapeMismatch, Tensor
from ..notation import EOS_ID, PAD_ID, SOS_ID

NEG_INF = -1e30


@dataclass
class AttentionMap:
    """Row-stochastic weights: query (or output) positions x key (or input) positions."""

    weights: np.ndarray
    model: str = ""
    kind: str = ""
    layer: int | None = None
    head: int | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeMismatch(f"attention map must be 2-D, got {w.shape}")
        self.weights = w

    @property
    def shape(self):
        return self.weights.shape

    def check(self, tol: float = 1e-9) -> bool:
        w = self.weights
        return bool((w >= 0).all() and np.allclose(w.sum(axis=1), 1.0, atol=tol, rtol=0))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None):
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes; ``mask`` is True where blocked."""
    d_k = q.shape[-1]
    if k.shape[-1] != d_k or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"attention q{q.shape} k{k.shape} v{v.shape}")
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_k))
    if mask is not None:
        scores = ad.masked_fill(scores, mask, NEG_INF)
    w = ad.softmax(scores, axis=-1)
    return ad.matmul(w, v), w


def attention(Q, K, V, d_k: int | None = None):
    """Single-head attention on 2-D inputs; returns ``(context, AttentionMap)``."""
    Q, K, V = (x if isinstance(x, Tensor) else Tensor(x) for x in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ShapeMismatch("attention expects 2-D Q, K, V")
    if d_k is not None and Q.shape[1] != d_k:
        raise ShapeMismatch(f"Q width {Q.shape[1]} != d_k {d_k}")
    ctx, w = scaled_dot_attention(Q, K, V)
    return ctx, AttentionMap(w.data.copy(), kind="attention")


def init_uniform(rng, shape, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def multi_head_params(rng, prefix: str, model_dim: int, heads: int, d_k: int, d_v: int) -> dict:
    """Projection matrices, each the column-concatenation of the per-head W_i."""
    return {
        f"{prefix}.wq": init_uniform(rng, (model_dim, heads * d_k), model_dim, d_k),
        f"{prefix}.wk": init_uniform(rng, (model_dim, heads * d_k), model_dim, d_k),
        f"{prefix}.wv": init_uniform(rng, (model_dim, heads * d_v), model_dim, d_v),
        f"{prefix}.wo": init_uniform(rng, (heads * d_v, model_dim), heads * d_v, model_dim),
    }


def _split_heads(t: Tensor, heads: int) -> Tensor:
    b, l, w = t.shape
    return ad.transpose(ad.reshape(t, (b, l, heads, w // heads)), (0, 2, 1, 3))


def multi_head(q_in: Tensor, k_in: Tensor, v_in: Tensor, params: dict, prefix: str, heads: int, mask=None):
    """Multi-head attention on batched inputs ``(B, L, model_dim)``.

    Returns the output ``(B, Lq, model_dim)`` and the weights tensor ``(B, heads, Lq, Lk)``.
    """
    if q_in.ndim != 3 or k_in.ndim != 3 or q_in.shape[0] != k_in.shape[0] or k_in.shape[:2] != v_in.shape[:2]:
        raise ShapeMismatch(f"multi_head inputs {q_in.shape}, {k_in.shape}, {v_in.shape}")
    wq, wk, wv, wo = (params[f"{prefix}.{n}"] for n in ("wq", "wk", "wv", "wo"))
    q = _split_heads(ad.matmul(q_in, wq), heads)
    k = _split_heads(ad.matmul(k_in, wk), heads)
    v = _split_heads(ad.matmul(v_in, wv), heads)
    ctx, w = scaled_dot_attention(q, k, v, mask)
    b, _, lq, dv = ctx.shape
    cat = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, lq, heads * dv))
    return ad.matmul(cat, wo), w


class MultiHeadAttention:
    """Standalone multi-head block over unbatched ``(L, model_dim)`` inputs."""

    def __init__(self, model_dim: int, heads: int, d_k: int | None = None, d_v: int | None = None, seed: int = 0):
        if model_dim % heads and (d_k is None or d_v is None):
            raise ValueError("model_dim must be divisible by heads")
        self.heads = heads
        self.d_k = d_k or model_dim // heads
        self.d_v = d_v or model_dim // heads
        rng = np.random.default_rng(seed)
        raw = multi_head_params(rng, "mha", model_dim, heads, self.d_k, self.d_v)
        self.params = {k: ad.parameter(v, k) for k, v in raw.items()}

    def __call__(self, Q, K, V=None, mask=None):
        Q, K = ad.as_tensor(Q), ad.as_tensor(K)
        V = K if V is None else ad.as_tensor(V)
        if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
            raise ShapeMismatch("MultiHeadAttention expects 2-D inputs")
        batched = [ad.reshape(t, (1,) + t.shape) for t in (Q, K, V)]
        out, w = multi_head(*batched, self.params, "mha", self.heads, mask)
        maps = [AttentionMap(w.data[0, h].copy(), kind="multi_head", head=h) for h in range(self.heads)]
        return ad.reshape(out, out.shape[1:]), maps


def sinusoid_table(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    src: np.ndarray        # (B, Ls) or (B, Ls, 3)
    src_mask: np.ndarray   # (B, Ls) True at real tokens
    tgt_in: np.ndarray     # (B, Lt) or (B, Lt, 3): SOS-shifted decoder input
    tgt_out: np.ndarray    # same shape: prediction targets
    tgt_mask: np.ndarray   # (B, Lt)


def pad_stack(seqs) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences (1-D or (L, 3)) with PAD; returns ids and validity mask."""
    L = max(len(s) for s in seqs)
    tail = seqs[0].shape[1:]
    out = np.full((len(seqs), L) + tail, PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
        mask[i, :len(s)] = True
    return out, mask


def make_batch(src_seqs, tgt_seqs, subtree: bool) -> Batch:
    """Teacher-forcing batch.  String targets end with EOS; subtree targets end when the tree closes."""
    src, src_mask = pad_stack(src_seqs)
    if subtree:
        sos = np.full((1, 3), SOS_ID, dtype=np.int64)
        tin = [np.concatenate([sos, t[:-1]]) for t in tgt_seqs]
        tout = list(tgt_seqs)
    else:
        tin = [np.concatenate([[SOS_ID], t]) for t in tgt_seqs]
        tout = [np.concatenate([t, [EOS_ID]]) for t in tgt_seqs]
    tgt_in, tgt_mask = pad_stack(tin)
    tgt_out, _ = pad_stack(tout)
    return Batch(src, src_mask, tgt_in, tgt_out, tgt_mask)

"""Sequence-to-sequence integrators: LSTM with attention and Transformer."""

from .base import Seq2Seq
from .config import (
    LSTM_DESK,
    LSTM_FULL_PRESETS,
    TRANSFORMER_DESK,
    TRANSFORMER_FULL,
    LstmConfig,
    TransformerConfig,
    config_from_dict,
    config_to_dict,
    model_config,
)
from .decode import MAX_LEN_EXCEEDED, DecodeResult, beam_decode, greedy_decode
from .layers import AttentionMap, Batch, MultiHeadAttention, attention, make_batch, multi_head
from .lstm import LstmSeq2Seq
from .transformer import TransformerSeq2Seq

ARCHITECTURES = ("lstm", "transformer")


def build_model(kind: str, cfg, scheme_pair, vocab, seed: int = 0) -> Seq2Seq:
    if kind == "lstm":
        return LstmSeq2Seq(cfg, scheme_pair, vocab, seed)
    if kind == "transformer":
        return TransformerSeq2Seq(cfg, scheme_pair, vocab, seed)
    raise ValueError(f"unknown architecture {kind!r}")


def lstm_forward(model: LstmSeq2Seq, batch: Batch):
    """Teacher-forced step distributions and the decoder attention maps of row 0."""
    logits, maps = model.logits(batch, collect=True)
    return model.distributions(batch), maps


def transformer_forward(model: TransformerSeq2Seq, batch: Batch):
    logits, maps = model.logits(batch, collect=True)
    return model.distributions(batch), maps

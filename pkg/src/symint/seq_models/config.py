"""Model hyperparameters and presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class LstmConfig:
    layer_count: int = 2
    hidden_dim: int = 64
    dropout: float = 0.0
    max_output_len: int = 64

    def __post_init__(self):
        if self.layer_count < 1 or self.hidden_dim < 2 or self.max_output_len < 1:
            raise ValueError("LSTM dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass(frozen=True)
class TransformerConfig:
    encoder_layers: int = 6
    decoder_layers: int = 6
    heads: int = 8
    model_dim: int = 512
    key_dim: int | None = None
    value_dim: int | None = None
    ffn_dim: int | None = None
    max_len: int = 1024
    dropout: float = 0.0
    max_output_len: int = 64

    def __post_init__(self):
        if min(self.encoder_layers, self.decoder_layers, self.heads, self.model_dim, self.max_len) < 1:
            raise ValueError("Transformer dimensions must be positive")
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def d_k(self) -> int:
        return self.key_dim or self.model_dim // self.heads

    @property
    def d_v(self) -> int:
        return self.value_dim or self.model_dim // self.heads

    @property
    def d_ff(self) -> int:
        return self.ffn_dim or 4 * self.model_dim


# Tuned per input/output scheme for the full-size corpus.
LSTM_FULL_PRESETS = {
    "string-polish": LstmConfig(layer_count=3, hidden_dim=929, dropout=0.1396),
    "subtree-polish": LstmConfig(layer_count=4, hidden_dim=384, dropout=0.17721),
    "string-irpp": LstmConfig(layer_count=5, hidden_dim=813, dropout=0.0404),
    "subtree-irpp": LstmConfig(layer_count=3, hidden_dim=1022, dropout=0.1974),
}
LSTM_DESK = LstmConfig(layer_count=2, hidden_dim=64, dropout=0.0)

TRANSFORMER_FULL = TransformerConfig()
TRANSFORMER_DESK = TransformerConfig(encoder_layers=2, decoder_layers=2, heads=4, model_dim=64, max_len=256)


def model_config(kind: str, preset: str, scheme_name: str):
    if kind == "lstm":
        if preset == "desk":
            return LSTM_DESK
        if preset == "full":
            return LSTM_FULL_PRESETS[scheme_name]
    elif kind == "transformer":
        if preset == "desk":
            return TRANSFORMER_DESK
        if preset == "full":
            return TRANSFORMER_FULL
    raise ValueError(f"unknown model/preset {kind}/{preset}")


def config_to_dict(cfg) -> dict:
    return asdict(cfg)


def config_from_dict(kind: str, d: dict):
    cls = LstmConfig if kind == "lstm" else TransformerConfig
    out = {}
    for f in fields(cls):
        if f.name not in d:
            continue
        v = d[f.name]
        if isinstance(v, str):
            if v == "None":
                v = None
            elif f.name == "dropout":
                v = float(v)
            else:
                v = int(v)
        out[f.name] = v
    return cls(**out)

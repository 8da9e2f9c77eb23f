"""Checkpoint container: a text header followed by little-endian float64 payloads.

Layout::

    SYMINT-CHECKPOINT 1
    key = value                 (sorted metadata, config echo, vocabulary)
    array <name> <d0,d1,...> <byte offset>
    payload_sha256 = <hex>
    END
    <raw payload bytes>
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeMismatch
from .notation import SchemePair, Vocab
from .seq_models import build_model, config_from_dict, config_to_dict

MAGIC = "SYMINT-CHECKPOINT 1"


class ChecksumMismatch(IOError):
    pass


class CheckpointFormatError(IOError):
    pass


@dataclass
class Checkpoint:
    kind: str
    scheme: str
    config: dict
    vocab: tuple
    arrays: dict
    epoch: int = 0
    val_rate: float | None = None
    manifest_hash: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, epoch=0, val_rate=None, manifest_hash="", meta=None) -> "Checkpoint":
        return cls(model.kind, model.scheme_pair.name, config_to_dict(model.cfg), tuple(model.vocab.tokens),
                   {k: np.array(v, dtype=np.float64) for k, v in model.state_dict().items()},
                   epoch, val_rate, manifest_hash, model.seed, dict(meta or {}))

    def build(self):
        """Instantiate the model described by this checkpoint with its parameters."""
        model = build_model(self.kind, config_from_dict(self.kind, self.config), SchemePair.parse(self.scheme),
                            Vocab(self.vocab), self.seed)
        model.load_state(self.arrays)
        return model

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.scheme}"


def _fmt(v) -> str:
    if v is None:
        return "None"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = {
        "kind": ckpt.kind,
        "scheme": ckpt.scheme,
        "epoch": _fmt(ckpt.epoch),
        "val_rate": _fmt(ckpt.val_rate),
        "manifest": ckpt.manifest_hash,
        "seed": _fmt(ckpt.seed),
        "vocab": " ".join(ckpt.vocab),
    }
    header.update({f"config.{k}": _fmt(v) for k, v in ckpt.config.items()})
    header.update({f"meta.{k}": _fmt(v) for k, v in ckpt.meta.items()})
    lines = [MAGIC] + [f"{k} = {header[k]}" for k in sorted(header)]
    chunks, offset = [], 0
    for name in sorted(ckpt.arrays):
        a = np.ascontiguousarray(ckpt.arrays[name], dtype="<f8")
        lines.append(f"array {name} {','.join(map(str, a.shape))} {offset}")
        raw = a.tobytes()
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    lines.append(f"payload_sha256 = {hashlib.sha256(payload).hexdigest()}")
    lines.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        fh.write(payload)


def _parse_value(v: str):
    if v == "None":
        return None
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def load_checkpoint(path, model=None) -> Checkpoint:
    """Read and verify a checkpoint; with ``model`` given, its parameters are replaced in place."""
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"\nEND\n")
    if not blob.startswith(MAGIC.encode()) or end < 0:
        raise CheckpointFormatError(f"{path} is not a checkpoint file")
    lines = blob[:end].decode("utf-8").split("\n")[1:]
    payload = blob[end + len(b"\nEND\n"):]
    header, arrays_idx = {}, []
    for line in lines:
        if line.startswith("array "):
            _, name, shape, offset = line.split(" ")
            dims = tuple(int(d) for d in shape.split(",")) if shape else ()
            arrays_idx.append((name, dims, int(offset)))
        else:
            k, _, v = line.partition(" = ")
            header[k] = v
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise ChecksumMismatch(f"payload checksum mismatch in {path}")
    arrays = {}
    for name, dims, offset in arrays_idx:
        count = int(np.prod(dims)) if dims else 1
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[name] = a.reshape(dims).astype(np.float64)
    config = {k[len("config."):]: v for k, v in header.items() if k.startswith("config.")}
    meta = {k[len("meta."):]: _parse_value(v) for k, v in header.items() if k.startswith("meta.")}
    val_rate = header.get("val_rate", "None")
    ckpt = Checkpoint(
        kind=header["kind"], scheme=header["scheme"], config=config,
        vocab=tuple(header.get("vocab", "").split(" ")), arrays=arrays,
        epoch=int(header.get("epoch", 0)), val_rate=None if val_rate == "None" else float(val_rate),
        manifest_hash=header.get("manifest", ""), seed=int(header.get("seed", 0)), meta=meta,
    )
    if model is not None:
        if model.scheme_pair.name != ckpt.scheme or model.kind != ckpt.kind:
            raise ShapeMismatch(f"checkpoint is {ckpt.name}, model is {model.name}")
        model.load_state(arrays)
    return ckpt

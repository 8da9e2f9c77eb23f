"""Loss, Adam with clipping and decoupled weight decay, fold training and cross-validation."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch
from .checkpoint import Checkpoint
from .evaluation import correct_answer_rate
from .expr import DEFAULT_POLICY, EquivalencePolicy
from .notation import SchemePair, Vocab
from .seq_models import build_model

log = logging.getLogger(__name__)


class DivergedLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossBatch:
    logits: np.ndarray    # (m, n)
    targets: np.ndarray   # (m, n) one-hot rows

    def __post_init__(self):
        x, t = np.asarray(self.logits), np.asarray(self.targets)
        if x.ndim != 2 or x.shape != t.shape:
            raise ShapeMismatch(f"logits {x.shape} vs targets {t.shape}")


def softmax_cross_entropy(batch: LossBatch) -> float:
    """``-(1/m) sum_ij t_ij log softmax(x)_ij`` with the row maximum subtracted first."""
    return float(ad.softmax_cross_entropy(ad.Tensor(batch.logits), batch.targets).data)


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 3e-3
    weight_decay: float = 0.0
    clip_norm: float = 5.0
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.clip_norm <= 0 or self.batch_size < 1:
            raise ValueError("lr and clip_norm must be positive, batch_size >= 1")


LSTM_OPT_FULL = {
    "string-polish": OptimizerConfig(lr=0.0018, weight_decay=8.59e-7, clip_norm=4.1231, batch_size=128),
    "subtree-polish": OptimizerConfig(lr=0.0005, weight_decay=2.9503e-7, clip_norm=7.6506, batch_size=128),
    "string-irpp": OptimizerConfig(lr=0.00055, weight_decay=0.000817, clip_norm=8.209, batch_size=128),
    "subtree-irpp": OptimizerConfig(lr=9.768e-5, weight_decay=5.639e-10, clip_norm=4.532, batch_size=128),
}
TRANSFORMER_OPT_FULL = {
    "string": OptimizerConfig(lr=1e-4, clip_norm=5.0, batch_size=128),
    "subtree": OptimizerConfig(lr=1e-4, clip_norm=5.0, batch_size=256),
}
OPT_DESK = OptimizerConfig(lr=3e-3, clip_norm=5.0, batch_size=25)
FULL_EPOCHS = {"lstm": 200, "transformer-string": 600, "transformer-subtree": 300}


def optimizer_config(kind: str, preset: str, scheme_name: str) -> OptimizerConfig:
    if preset == "desk":
        return OPT_DESK
    if kind == "lstm":
        return LSTM_OPT_FULL[scheme_name]
    return TRANSFORMER_OPT_FULL[scheme_name.split("-")[0]]


def clip_by_global_norm(grads: dict, clip_norm: float) -> tuple[dict, float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > clip_norm:
        s = clip_norm / norm
        return {k: g * s for k, g in grads.items()}, norm
    return grads, norm


def adam_step(params: dict, grads: dict, cfg: OptimizerConfig, state: dict, step: int) -> dict:
    """One Adam update (``step`` counts from 1) on arrays; ``state`` holds the moment buffers."""
    grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
    m, v = state.setdefault("m", {}), state.setdefault("v", {})
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    out = {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        mk = m.get(k, np.zeros_like(p))
        vk = v.get(k, np.zeros_like(p))
        mk = cfg.beta1 * mk + (1.0 - cfg.beta1) * g
        vk = cfg.beta2 * vk + (1.0 - cfg.beta2) * g * g
        m[k], v[k] = mk, vk
        p = p * (1.0 - cfg.lr * cfg.weight_decay)
        out[k] = p - cfg.lr * (mk / bc1) / (np.sqrt(vk / bc2) + cfg.eps)
    return out


class Adam:
    def __init__(self, params: dict, cfg: OptimizerConfig):
        self.params, self.cfg = params, cfg
        self.state: dict = {}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        for k, a in adam_step(arrays, grads, self.cfg, self.state, self.t).items():
            self.params[k].data = a
            self.params[k].grad = None


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild an untrained model (picklable for worker processes)."""

    kind: str
    cfg: object
    scheme: str
    vocab: tuple

    def build(self, seed: int):
        return build_model(self.kind, self.cfg, SchemePair.parse(self.scheme), Vocab(self.vocab), seed)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    token_accuracy: float
    val_rate: float | None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list = field(default_factory=list)
    model: object = None


def token_accuracy(model, pairs, batch_size: int = 64) -> float:
    """Teacher-forced fraction of target tokens predicted by argmax (each subtree slot counts)."""
    correct = total = 0
    pairs = list(pairs)
    for lo in range(0, len(pairs), batch_size):
        _, (c, t) = model.loss(model.batch(pairs[lo:lo + batch_size]))
        correct += c
        total += t
    return correct / total if total else 0.0


_LOG_FIELDS = ["epoch", "loss", "token_accuracy", "val_rate"]


def _log_row(writer, rec: EpochRecord) -> None:
    writer.writerow([rec.epoch, repr(rec.loss), repr(rec.token_accuracy),
                     "" if rec.val_rate is None else repr(rec.val_rate)])


def train_fold(model, train_pairs, val_pairs, opt: OptimizerConfig, epochs: int, seed: int = 0,
               policy: EquivalencePolicy = DEFAULT_POLICY, log_path=None, manifest_hash: str = "",
               stop_token_accuracy: float | None = None, validate_every: int = 1) -> TrainResult:
    """Teacher-forced minibatch training keeping the checkpoint with the best validation rate.

    Without validation pairs the last epoch is kept.  ``stop_token_accuracy``
    ends training early once an epoch's teacher-forced accuracy reaches it.
    """
    train_pairs = list(train_pairs)
    val_pairs = list(val_pairs or [])
    if not train_pairs and epochs > 0:
        raise ValueError("no training pairs")
    adam = Adam(model.params, opt)
    history = []
    fh = open(log_path, "w", newline="", encoding="utf-8") if log_path else None
    writer = csv.writer(fh, lineterminator="\n") if fh else None
    if writer:
        writer.writerow(_LOG_FIELDS)

    def validate(epoch, force=False):
        if not val_pairs or (epoch % validate_every and epoch != epochs and not force):
            return None
        return correct_answer_rate(model, val_pairs, policy)

    try:
        rate = validate(0)
        best = Checkpoint.from_model(model, 0, rate, manifest_hash)
        best_rate = rate
        step = 0
        for epoch in range(1, epochs + 1):
            order = np.random.default_rng([seed, epoch]).permutation(len(train_pairs))
            loss_sum, correct, total = 0.0, 0, 0
            for lo in range(0, len(order), opt.batch_size):
                chunk = [train_pairs[i] for i in order[lo:lo + opt.batch_size]]
                step += 1
                key = ad.DropoutKey(seed, step)
                model.zero_grad()
                with ad.Tape() as tape:
                    loss, (c, t) = model.loss(model.batch(chunk), train=True, key=key)
                    value = float(loss.data)
                    if not math.isfinite(value):
                        raise DivergedLoss(f"non-finite loss {value} at epoch {epoch}, step {step}")
                    ad.backward(loss, tape)
                adam.step()
                loss_sum += value * t
                correct += c
                total += t
            acc = correct / total
            stopping = stop_token_accuracy is not None and acc >= stop_token_accuracy
            rate = validate(epoch, force=stopping)
            rec = EpochRecord(epoch, loss_sum / total, acc, rate)
            history.append(rec)
            log.debug("epoch %d loss %.5f token accuracy %.4f val rate %s", epoch, rec.loss, acc, rate)
            if writer:
                _log_row(writer, rec)
                fh.flush()
            improved = rate is not None and (best_rate is None or rate > best_rate)
            if improved or not val_pairs:
                best = Checkpoint.from_model(model, epoch, rate, manifest_hash)
                best_rate = rate if rate is not None else best_rate
            if stopping:
                break
    finally:
        if fh:
            fh.close()
    return TrainResult(best, history, model)


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldReport:
    fold: int
    val_ids: tuple
    best_epoch: int
    val_rate: float | None


def _fold_job(args):
    spec, fold, train, val, opt, epochs, seed, policy, log_path, manifest_hash, stop = args
    model = spec.build(seed + fold)
    res = train_fold(model, train, val, opt, epochs, seed + fold, policy, log_path, manifest_hash, stop)
    return res.checkpoint


def cross_validate(spec: ModelSpec, pairs, plan, opt: OptimizerConfig, epochs: int, seed: int = 0,
                   policy: EquivalencePolicy = DEFAULT_POLICY, folds=None, workers: int = 1,
                   log_dir=None, manifest_hash: str = "", stop_token_accuracy: float | None = None):
    """Train one replica per fold (seed + fold) and keep the best validation checkpoint.

    Returns ``(best checkpoint, fold reports)``.  Ties go to the lower fold index.
    """
    by_id = {p.id: p for p in pairs}
    folds = list(range(plan.n_folds)) if folds is None else list(folds)
    jobs = []
    for k in folds:
        val_ids = plan.fold_validation(k)
        train = [by_id[i] for i in plan.fold_train(k)]
        val = [by_id[i] for i in val_ids]
        log_path = os.path.join(log_dir, f"fold{k}.csv") if log_dir else None
        jobs.append((spec, k, train, val, opt, epochs, seed, policy, log_path, manifest_hash, stop_token_accuracy))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            ckpts = list(pool.map(_fold_job, jobs))
    else:
        ckpts = [_fold_job(j) for j in jobs]
    reports = [FoldReport(k, plan.fold_validation(k), c.epoch, c.val_rate) for k, c in zip(folds, ckpts)]
    best_i = max(range(len(ckpts)), key=lambda i: (ckpts[i].val_rate if ckpts[i].val_rate is not None else -1.0, -i))
    best = ckpts[best_i]
    best.meta["fold"] = folds[best_i]
    return best, reports

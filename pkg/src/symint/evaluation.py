"""Correct-answer rates, the verification-based ensemble selector, overlap tables and timing."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .calculus import verify_pair
from .expr import DEFAULT_POLICY, EquivalencePolicy, Expr

_ARCH_ORDER = {"lstm": 0, "transformer": 1}
_FORMAT_ORDER = {"string": 0, "subtree": 1}
_DIRECTION_ORDER = {"polish": 0, "irpp": 1}


class NoCorrectAnswer(LookupError):
    pass


class EmptyEvaluation(ValueError):
    pass


def query_order(model) -> tuple:
    """LSTM before Transformer, string before subtree, Polish before IRPP."""
    sp = model.scheme_pair
    return (_ARCH_ORDER.get(model.kind, 9), _FORMAT_ORDER[sp.format], _DIRECTION_ORDER[sp.order], model.name)


class ModelRegistry:
    """Up to eight named integrators, kept in query order."""

    def __init__(self, models=()):
        self.models = []
        for m in models:
            self.add(m)

    def add(self, model) -> None:
        if any(m.name == model.name for m in self.models):
            raise ValueError(f"duplicate model name {model.name!r}")
        self.models.append(model)
        self.models.sort(key=query_order)

    def __iter__(self):
        return iter(self.models)

    def __len__(self):
        return len(self.models)

    @property
    def names(self) -> list:
        return [m.name for m in self.models]


def _verified(integrand: Expr, result, policy) -> bool:
    return result.expr is not None and verify_pair(integrand, result.expr, policy)


def model_outcomes(model, pairs, policy: EquivalencePolicy = DEFAULT_POLICY, batch_size: int = 64):
    """Per-pair ``(DecodeResult, verified)`` for one model."""
    out = []
    pairs = list(pairs)
    for lo in range(0, len(pairs), batch_size):
        chunk = pairs[lo:lo + batch_size]
        results = model.integrate_batch([p.integrand for p in chunk])
        out.extend((r, _verified(p.integrand, r, policy)) for p, r in zip(chunk, results))
    return out


def correct_answer_rate(model, pairs, policy: EquivalencePolicy = DEFAULT_POLICY) -> float:
    """``100 * verified / total``; decode failures and unverifiable outputs count as incorrect."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyEvaluation("no pairs to evaluate")
    hits = sum(ok for _, ok in model_outcomes(model, pairs, policy))
    return 100.0 * hits / len(pairs)


def integrated_select(registry: ModelRegistry, integrand: Expr, policy: EquivalencePolicy = DEFAULT_POLICY,
                      beam_width: int = 1):
    """First verified primitive in query order, as ``(primitive, model name)``."""
    if not len(registry):
        raise ValueError("registry is empty")
    for model in registry:
        (result,) = model.integrate_batch([integrand], beam_width=beam_width)
        if _verified(integrand, result, policy):
            return result.expr, model.name
    raise NoCorrectAnswer("no model produced a verified primitive")


@dataclass
class EvalOutcome:
    pair_id: str
    outputs: dict       # model name -> DecodeResult
    verified: dict      # model name -> bool
    selected: str | None


def evaluate(registry: ModelRegistry, pairs, policy: EquivalencePolicy = DEFAULT_POLICY) -> list[EvalOutcome]:
    """Run every model on every pair; the selected model is the first verified one in query order."""
    pairs = list(pairs)
    per_model = {m.name: model_outcomes(m, pairs, policy) for m in registry}
    outcomes = []
    for i, p in enumerate(pairs):
        outputs = {name: per_model[name][i][0] for name in registry.names}
        verified = {name: per_model[name][i][1] for name in registry.names}
        selected = next((n for n in registry.names if verified[n]), None)
        outcomes.append(EvalOutcome(p.id, outputs, verified, selected))
    return outcomes


def rates(outcomes: list[EvalOutcome], names) -> dict:
    """Per-model and integrated correct-answer rates (percent)."""
    if not outcomes:
        raise EmptyEvaluation("no outcomes")
    n = len(outcomes)
    out = {name: 100.0 * sum(o.verified[name] for o in outcomes) / n for name in names}
    out["integrated"] = 100.0 * sum(o.selected is not None for o in outcomes) / n
    return out


@dataclass
class VennReport:
    names: list
    pair_ids: list
    incorrect: np.ndarray   # (pairs, models) bool

    def region_counts(self, subset=None) -> dict:
        """Pairs by exact set of failing models (restricted to ``subset``), empty set excluded."""
        names = list(subset or self.names)
        cols = [self.names.index(n) for n in names]
        counts = {}
        for row in self.incorrect[:, cols]:
            key = frozenset(n for n, bad in zip(names, row) if bad)
            if key:
                counts[key] = counts.get(key, 0) + 1
        return counts

    def union_size(self, subset=None) -> int:
        cols = [self.names.index(n) for n in (subset or self.names)]
        return int(self.incorrect[:, cols].any(axis=1).sum())


def venn_report(outcomes: list[EvalOutcome], names) -> VennReport:
    names = list(names)
    mat = np.array([[not o.verified[n] for n in names] for o in outcomes], dtype=bool).reshape(len(outcomes),
                                                                                                   len(names))
    return VennReport(names, [o.pair_id for o in outcomes], mat)


@dataclass
class RuntimeRow:
    name: str
    mean: float
    std: float
    pairs: int


def bench_runtime(registry: ModelRegistry, pairs, repetitions: int = 1,
                  policy: EquivalencePolicy = DEFAULT_POLICY) -> list[RuntimeRow]:
    """Mean and standard deviation of wall-clock seconds per single integration.

    Every model and the integrated selector run one untimed warm-up pass, then
    each pair is integrated alone (sequentially) ``repetitions`` times.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyEvaluation("cannot time zero pairs")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")

    def run_model(model, p):
        (r,) = model.integrate_batch([p.integrand])
        _verified(p.integrand, r, policy)

    def run_integrated(p):
        try:
            integrated_select(registry, p.integrand, policy)
        except NoCorrectAnswer:
            pass

    rows = []
    jobs = [(m.name, lambda p, m=m: run_model(m, p)) for m in registry] + [("integrated", run_integrated)]
    for name, fn in jobs:
        fn(pairs[0])
        samples = []
        for _ in range(repetitions):
            for p in pairs:
                t0 = time.perf_counter()
                fn(p)
                samples.append(time.perf_counter() - t0)
        std = statistics.pstdev(samples) if len(samples) > 1 else 0.0
        rows.append(RuntimeRow(name, statistics.fmean(samples), std, len(pairs)))
    return rows


# ---------------------------------------------------------------------------
# reports


def write_outcomes_csv(outcomes: list[EvalOutcome], names, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id"] + [f"verified.{n}" for n in names] + ["selected"])
        for o in outcomes:
            w.writerow([o.pair_id] + [int(o.verified[n]) for n in names] + [o.selected or ""])


def write_venn_csv(report: VennReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id"] + [f"incorrect.{n}" for n in report.names])
        for pid, row in zip(report.pair_ids, report.incorrect):
            w.writerow([pid] + [int(v) for v in row])


def write_summary(values: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k in sorted(values):
            v = values[k]
            fh.write(f"{k} = {v:.4f}\n" if isinstance(v, float) else f"{k} = {v}\n")


def write_runtime_csv(rows: list[RuntimeRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mean_seconds", "std_seconds", "pairs"])
        for r in rows:
            w.writerow([r.name, f"{r.mean:.6g}", f"{r.std:.6g}", r.pairs])

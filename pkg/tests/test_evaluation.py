import random

import numpy as np
import pytest

from symint.calculus import differentiate
from symint.datagen import DatasetPair, corpus_vocab, pair_id
from symint.expr import ONE, X, cot, csc, equivalent, minus, normalize, power
from symint.notation import DecodeError, SchemePair
from symint.seq_models import DecodeResult, LstmConfig, build_model
from symint.evaluation import (
    EmptyEvaluation, ModelRegistry, NoCorrectAnswer, bench_runtime, correct_answer_rate, evaluate,
    integrated_select, query_order, rates, venn_report, write_outcomes_csv, write_summary,
)


class StubModel:
    """Registry-compatible integrator driven by a Python function."""

    def __init__(self, kind, scheme, fn):
        self.kind = kind
        self.scheme_pair = SchemePair.parse(scheme)
        self.fn = fn

    @property
    def name(self):
        return f"{self.kind}-{self.scheme_pair.name}"

    def integrate_batch(self, integrands, max_len=None, beam_width=1):
        out = []
        for f in integrands:
            e = self.fn(f)
            out.append(DecodeResult(None, None, DecodeError.TRUNCATED) if e is None else DecodeResult(None, e))
        return out


def oracle(pairs):
    table = {p.integrand: p.primitive for p in pairs}
    return lambda f: table.get(f)


def test_oracle_scores_100(corpus3):
    assert correct_answer_rate(StubModel("lstm", "string-polish", oracle(corpus3)), corpus3) == 100.0


def test_constant_x_scores_one_pair(corpus3):
    assert sum(1 for p in corpus3 if p.integrand == ONE) == 1
    rate = correct_answer_rate(StubModel("lstm", "string-polish", lambda f: X), corpus3)
    assert rate == pytest.approx(100.0 / len(corpus3), abs=1e-12)


def test_failures_count_as_incorrect(corpus3):
    assert correct_answer_rate(StubModel("lstm", "string-polish", lambda f: None), corpus3[:20]) == 0.0


def test_rate_needs_pairs():
    with pytest.raises(EmptyEvaluation):
        correct_answer_rate(StubModel("lstm", "string-polish", lambda f: X), [])


def test_selector_picks_verified_cot():
    integrand = normalize(minus(power(csc(X), 2)))
    reg = ModelRegistry([
        StubModel("lstm", "string-polish", lambda f: csc(X)),
        StubModel("lstm", "subtree-irpp", lambda f: None),
        StubModel("transformer", "string-polish", lambda f: cot(X)),
    ])
    expr, name = integrated_select(reg, integrand)
    assert expr == cot(X) and name == "transformer-string-polish"


def test_selector_no_correct_answer():
    reg = ModelRegistry([StubModel("lstm", s.name, lambda f: None) for s in map(SchemePair.parse, [
        "string-polish", "subtree-polish"])])
    with pytest.raises(NoCorrectAnswer):
        integrated_select(reg, X)


def test_query_order():
    names = [f"{k}-{f}-{d}" for k in ("transformer", "lstm") for f in ("subtree", "string") for d in ("irpp", "polish")]
    reg = ModelRegistry([StubModel(n.split("-")[0], n.split("-", 1)[1], lambda f: None) for n in names])
    assert reg.names == [
        "lstm-string-polish", "lstm-string-irpp", "lstm-subtree-polish", "lstm-subtree-irpp",
        "transformer-string-polish", "transformer-string-irpp", "transformer-subtree-polish",
        "transformer-subtree-irpp",
    ]
    assert sorted(reg.models, key=query_order) == reg.models
    with pytest.raises(ValueError):
        reg.add(StubModel("lstm", "string-polish", lambda f: None))


def partial_oracle(pairs, keep):
    table = {p.integrand: p.primitive for p in pairs if keep(p)}
    return lambda f: table.get(f)


def three_model_registry(pairs):
    rng = random.Random(0)
    masks = [{p.id for p in pairs if rng.random() < q} for q in (0.3, 0.5, 0.6)]
    return ModelRegistry([
        StubModel("lstm", "string-polish", partial_oracle(pairs, lambda p: p.id in masks[0])),
        StubModel("lstm", "subtree-irpp", partial_oracle(pairs, lambda p: p.id in masks[1])),
        StubModel("transformer", "string-irpp", partial_oracle(pairs, lambda p: p.id in masks[2])),
    ]), masks


def test_integrated_set_is_union(corpus3):
    pairs = corpus3[:60]
    reg, masks = three_model_registry(pairs)
    outcomes = evaluate(reg, pairs)
    integrated = {o.pair_id for o in outcomes if o.selected}
    assert integrated == set().union(*masks)
    per_model = [{o.pair_id for o in outcomes if o.verified[n]} for n in reg.names]
    assert integrated == set().union(*per_model)
    r = rates(outcomes, reg.names)
    assert r["integrated"] >= max(r[n] for n in reg.names)
    for o in outcomes:
        if o.selected:
            assert o.verified[o.selected]
            assert not any(o.verified[n] for n in reg.names[:reg.names.index(o.selected)])
        for n in reg.names:
            assert not o.verified[n] or o.outputs[n].ok


def test_rates_invariant_under_reordering(corpus3):
    pairs = corpus3[:60]
    reg, _ = three_model_registry(pairs)
    a = rates(evaluate(reg, pairs), reg.names)
    shuffled = list(pairs)
    random.Random(5).shuffle(shuffled)
    assert rates(evaluate(reg, shuffled), reg.names) == a


def test_venn_regions(corpus3):
    pairs = corpus3[:60]
    reg, masks = three_model_registry(pairs)
    rep = venn_report(evaluate(reg, pairs), reg.names)
    counts = rep.region_counts()
    assert sum(counts.values()) == rep.union_size()
    wrong = [{p.id for p in pairs} - m for m in masks]
    assert rep.union_size() == len(set().union(*wrong))
    only_first = wrong[0] - wrong[1] - wrong[2]
    assert counts.get(frozenset([reg.names[0]]), 0) == len(only_first)
    single = rep.region_counts([reg.names[1]])
    assert single == ({frozenset([reg.names[1]]): len(wrong[1])} if wrong[1] else {})


def test_venn_all_correct(corpus3):
    reg = ModelRegistry([StubModel("lstm", "string-polish", oracle(corpus3))])
    rep = venn_report(evaluate(reg, corpus3[:10]), reg.names)
    assert rep.region_counts() == {} and rep.union_size() == 0


def test_bench_runtime(corpus3):
    reg, _ = three_model_registry(corpus3[:5])
    rows = bench_runtime(reg, corpus3[:5], repetitions=2)
    assert [r.name for r in rows] == reg.names + ["integrated"]
    assert all(r.mean >= 0 and r.std >= 0 and r.pairs == 5 for r in rows)
    with pytest.raises(EmptyEvaluation):
        bench_runtime(reg, [])


def test_trained_rate_matches_recount(subset100):
    from symint.training import OPT_DESK, train_fold
    pairs = subset100[:30]
    sp = SchemePair.parse("string-polish")
    m = build_model("lstm", LstmConfig(layer_count=1, hidden_dim=32), sp, corpus_vocab(subset100, "string"), 0)
    train_fold(m, pairs, [], OPT_DESK, 15, seed=0)
    hits = 0
    for p in pairs:
        (r,) = m.integrate_batch([p.integrand])
        if r.expr is not None and equivalent(differentiate(r.expr), p.integrand):
            hits += 1
    assert correct_answer_rate(m, pairs) == pytest.approx(100.0 * hits / len(pairs), abs=1e-12)


def test_report_files(corpus3, tmp_path):
    pairs = corpus3[:8]
    reg, _ = three_model_registry(pairs)
    outcomes = evaluate(reg, pairs)
    write_outcomes_csv(outcomes, reg.names, tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0].split(",")[0] == "pair_id" and len(lines) == 9
    write_summary(rates(outcomes, reg.names), tmp_path / "s.txt")
    assert all(" = " in ln for ln in (tmp_path / "s.txt").read_text().splitlines())


def test_pair_reference_is_self_consistent():
    p = DatasetPair(pair_id(cot(X)), normalize(minus(power(csc(X), 2))), cot(X))
    reg = ModelRegistry([StubModel("lstm", "string-polish", oracle([p]))])
    assert rates(evaluate(reg, [p]), reg.names) == {"lstm-string-polish": 100.0, "integrated": 100.0}
    assert np.isfinite(correct_answer_rate(reg.models[0], [p]))

"""Primitive enumeration, integrand generation, splits, and dataset files."""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calculus import differentiate, verify_pair
from .expr import DEFAULT_POLICY, E, N, ZERO, X, Expr, cos, ln, normalize, power, root, sin, sqrt, tan, times
from .notation import SCHEME_PAIRS, STRING, Scheme, SchemePair, TokenSeq, Vocab, decode, encode

log = logging.getLogger(__name__)

DEFAULT_BASE_SET = (X, N, sin(X), cos(X), tan(X), ln(X), power(E, X), sqrt(X), root(3, X))
MANIFEST = "manifest.txt"
SPLIT_FILE = "split.txt"


class TooFewPairs(ValueError):
    pass


class CorpusIntegrityError(IOError):
    """A dataset file does not match the checksum or counts recorded in its manifest."""


@dataclass(frozen=True)
class GeneratorConfig:
    base_set: tuple = DEFAULT_BASE_SET
    max_factors: int = 5
    seed: int = 0
    drop_zero_derivative: bool = True

    def __post_init__(self):
        if not 1 <= self.max_factors <= 8:
            raise ValueError("max_factors must be in 1..8")
        if not self.base_set:
            raise ValueError("base_set must not be empty")


@dataclass(frozen=True)
class DatasetPair:
    id: str
    integrand: Expr
    primitive: Expr


def pair_id(primitive: Expr) -> str:
    text = " ".join(encode(primitive, Scheme(STRING)).tokens)
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:12]


def multiset_count(n_factors: int, max_factors: int) -> int:
    return sum(math.comb(n_factors + k - 1, k) for k in range(1, max_factors + 1))


def enumerate_primitives(cfg: GeneratorConfig) -> list[Expr]:
    """Normalized products of 1..max_factors base factors, first occurrence kept."""
    seen = set()
    out = []
    for k in range(1, cfg.max_factors + 1):
        for combo in itertools.combinations_with_replacement(cfg.base_set, k):
            prod = combo[0]
            for f in combo[1:]:
                prod = times(prod, f)
            prod = normalize(prod)
            if prod not in seen:
                seen.add(prod)
                out.append(prod)
    return out


def _make_pair(primitive: Expr):
    integrand = differentiate(primitive)
    return integrand, verify_pair(integrand, primitive, DEFAULT_POLICY)


def build_corpus(cfg: GeneratorConfig, workers: int = 1, stats: dict | None = None) -> list[DatasetPair]:
    prims = enumerate_primitives(cfg)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            made = list(pool.map(_make_pair, prims, chunksize=64))
    else:
        made = [_make_pair(p) for p in prims]
    pairs, seen = [], set()
    dropped_zero = failed = 0
    for prim, (integrand, ok) in zip(prims, made):
        if integrand == ZERO and cfg.drop_zero_derivative:
            dropped_zero += 1
            continue
        if not ok:
            failed += 1
            log.warning("dropping pair that failed verification: %s", prim)
            continue
        key = (integrand, prim)
        if key in seen:
            continue
        seen.add(key)
        pairs.append(DatasetPair(pair_id(prim), integrand, prim))
    if stats is not None:
        stats.update(multisets=multiset_count(len(cfg.base_set), cfg.max_factors),
                     primitives=len(prims), dropped_zero=dropped_zero,
                     failed_verification=failed, pairs=len(pairs))
    return pairs


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train_ids: tuple
    test_ids: tuple
    fold_of: dict = field(hash=False)
    n_folds: int = 10

    def fold_validation(self, k: int) -> tuple:
        return tuple(i for i in self.train_ids if self.fold_of[i] == k)

    def fold_train(self, k: int) -> tuple:
        return tuple(i for i in self.train_ids if self.fold_of[i] != k)

    def to_text(self) -> str:
        lines = [f"{i}\ttrain\t{self.fold_of[i]}" for i in self.train_ids]
        lines += [f"{i}\ttest\t-" for i in self.test_ids]
        return "".join(line + "\n" for line in lines)


def split_corpus(pairs, seed: int = 0, n_folds: int = 10) -> SplitPlan:
    """Shuffled 4:1 train/test split, then ``n_folds`` validation folds over train."""
    if len(pairs) < 50:
        raise TooFewPairs(f"need at least 50 pairs, got {len(pairs)}")
    ids = sorted(p.id for p in pairs)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate pair ids")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_test = -(-len(ids) // 5)
    test, train = shuffled[:n_test], shuffled[n_test:]
    fold_of = {}
    for k, chunk in enumerate(np.array_split(np.arange(len(train)), n_folds)):
        for j in chunk:
            fold_of[train[j]] = k
    return SplitPlan(seed, tuple(train), tuple(test), fold_of, n_folds)


def _trivial_plan(pairs, n_folds: int = 10) -> SplitPlan:
    ids = tuple(p.id for p in pairs)
    return SplitPlan(0, ids, (), {i: j % n_folds for j, i in enumerate(ids)}, n_folds)


# ---------------------------------------------------------------------------
# files


def read_manifest(path) -> dict:
    out = {}
    fname = os.path.join(path, MANIFEST)
    if not os.path.exists(fname):
        return out
    with open(fname, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(" = ")
            out[key] = value
    return out


def write_manifest(path, entries: dict) -> None:
    with open(os.path.join(path, MANIFEST), "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(entries):
            fh.write(f"{key} = {entries[key]}\n")


def _sha256(fname) -> str:
    with open(fname, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def corpus_vocab(pairs, fmt: str) -> Vocab:
    seqs = []
    for p in pairs:
        seqs.append(encode(p.integrand, Scheme(fmt)))
        seqs.append(encode(p.primitive, Scheme(fmt)))
    return Vocab.build(seqs, fmt)


def pair_line(pair: DatasetPair, scheme_pair: SchemePair) -> str:
    src = " ".join(encode(pair.integrand, scheme_pair.input).tokens)
    tgt = " ".join(encode(pair.primitive, scheme_pair.output).tokens)
    return f"{src}\t{tgt}\n"


def write_corpus(pairs, plan: SplitPlan | None, scheme_pair: SchemePair, path, extra_manifest=None) -> None:
    """Write ``<scheme>.train.txt``/``<scheme>.test.txt``, the split table and the manifest."""
    os.makedirs(path, exist_ok=True)
    plan = plan or _trivial_plan(pairs)
    by_id = {p.id: p for p in pairs}
    if set(by_id) != set(plan.train_ids) | set(plan.test_ids):
        raise ValueError("split plan does not cover the corpus")
    manifest = read_manifest(path)
    for split, ids in (("train", plan.train_ids), ("test", plan.test_ids)):
        fname = os.path.join(path, f"{scheme_pair.name}.{split}.txt")
        with open(fname, "w", encoding="utf-8", newline="\n") as fh:
            for i in ids:
                fh.write(pair_line(by_id[i], scheme_pair))
        manifest[f"sha256.{scheme_pair.name}.{split}"] = _sha256(fname)
        manifest[f"count.{split}"] = str(len(ids))
    order_file = os.path.join(path, SPLIT_FILE)
    with open(order_file, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(plan.to_text())
    manifest["sha256.split"] = _sha256(order_file)
    manifest["count.pairs"] = str(len(pairs))
    manifest["split.seed"] = str(plan.seed)
    manifest["split.folds"] = str(plan.n_folds)
    schemes = set(filter(None, manifest.get("schemes", "").split(",")))
    schemes.add(scheme_pair.name)
    manifest["schemes"] = ",".join(sorted(schemes))
    manifest[f"vocab.{scheme_pair.format}"] = " ".join(corpus_vocab(pairs, scheme_pair.format).tokens)
    manifest.update(extra_manifest or {})
    write_manifest(path, manifest)


def read_corpus(path, scheme_pair: SchemePair) -> tuple[list[DatasetPair], SplitPlan]:
    manifest = read_manifest(path)
    if not manifest:
        raise CorpusIntegrityError(f"no manifest in {path}")
    order_file = os.path.join(path, SPLIT_FILE)
    if _sha256(order_file) != manifest.get("sha256.split"):
        raise CorpusIntegrityError("split table checksum mismatch")
    train_ids, test_ids, fold_of = [], [], {}
    with open(order_file, encoding="utf-8") as fh:
        for line in fh:
            pid, split, fold = line.rstrip("\n").split("\t")
            if split == "train":
                train_ids.append(pid)
                fold_of[pid] = int(fold)
            else:
                test_ids.append(pid)
    pairs = []
    for split, ids in (("train", train_ids), ("test", test_ids)):
        fname = os.path.join(path, f"{scheme_pair.name}.{split}.txt")
        if _sha256(fname) != manifest.get(f"sha256.{scheme_pair.name}.{split}"):
            raise CorpusIntegrityError(f"checksum mismatch for {fname}")
        with open(fname, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if len(lines) != len(ids):
            raise CorpusIntegrityError(f"{fname} has {len(lines)} records, split table lists {len(ids)}")
        for pid, line in zip(ids, lines):
            src, tgt = line.split("\t")
            integrand = decode(TokenSeq.parse(src, scheme_pair.input))
            primitive = decode(TokenSeq.parse(tgt, scheme_pair.output))
            pairs.append(DatasetPair(pid, integrand, primitive))
    plan = SplitPlan(int(manifest.get("split.seed", 0)), tuple(train_ids), tuple(test_ids), fold_of,
                     int(manifest.get("split.folds", 10)))
    return pairs, plan


def generate(cfg: GeneratorConfig, out_dir, workers: int = 1, split_seed: int | None = None):
    """Build the corpus and write all four scheme files plus manifest into ``out_dir``."""
    stats: dict = {}
    pairs = build_corpus(cfg, workers=workers, stats=stats)
    plan = split_corpus(pairs, cfg.seed if split_seed is None else split_seed) if len(pairs) >= 50 else None
    extra = {f"corpus.{k}": str(v) for k, v in stats.items()}
    extra["generator.max_factors"] = str(cfg.max_factors)
    extra["generator.seed"] = str(cfg.seed)
    extra["generator.base_set"] = " | ".join(" ".join(encode(b, Scheme(STRING)).tokens) for b in cfg.base_set)
    for sp in SCHEME_PAIRS:
        write_corpus(pairs, plan, sp, out_dir, extra)
    return pairs, plan


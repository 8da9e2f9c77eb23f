"""Command-line entry point: ``symint {gen,train,eval,integrate,analyze,bench}``.

Errors are reported as one line on stderr, ``symint: error: <category>: <message>``,
with exit status 2 (usage), 3 (data) or 4 (no verified answer under ``--strict``).
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import logging
import os
import sys

import numpy as np

from . import __version__
from .analysis import (
    attention_entropy,
    dissimilarity_matrix,
    layer_mean_entropy,
    map_divergence,
    mds_embed,
    write_coords_csv,
    write_entropy_csv,
    write_matrix_csv,
    write_row_divergence_csv,
)
from .autodiff import ShapeMismatch
from .calculus import verify_pair
from .checkpoint import ChecksumMismatch, CheckpointFormatError, load_checkpoint, save_checkpoint
from .datagen import (
    MANIFEST,
    CorpusIntegrityError,
    DatasetPair,
    GeneratorConfig,
    generate,
    read_corpus,
    read_manifest,
    write_manifest,
)
from .evaluation import (
    ModelRegistry,
    NoCorrectAnswer,
    bench_runtime,
    evaluate,
    integrated_select,
    rates,
    venn_report,
    write_outcomes_csv,
    write_runtime_csv,
    write_summary,
    write_venn_csv,
)
from .expr import DEFAULT_POLICY, X
from .notation import SCHEME_PAIRS, STRING, DecodeError, Scheme, SchemePair, TokenSeq, Vocab, decode, encode
from .seq_models import model_config
from .training import FULL_EPOCHS, ModelSpec, cross_validate, optimizer_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NO_ANSWER = 0, 2, 3, 4
DESK_EPOCHS = 50


class CliError(Exception):
    def __init__(self, code: int, category: str, message: str):
        super().__init__(message)
        self.code, self.category = code, category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def _data_error(msg) -> CliError:
    return CliError(EXIT_DATA, "data", str(msg).replace("\n", " "))


# ---------------------------------------------------------------------------
# helpers


def _file_sha(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _resolved(args) -> dict:
    # the output directory is where the manifest lives, so it is not echoed (keeps reruns byte-identical)
    return {f"run.{k}": (" ".join(map(str, v)) if isinstance(v, list) else str(v))
            for k, v in sorted(vars(args).items()) if k not in ("func", "config", "out")}


def _load_config_file(path) -> dict:
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                k, sep, v = line.partition("=")
                if not sep:
                    raise CliError(EXIT_USAGE, "usage", f"bad config line {line!r}")
                out[k.strip().replace("-", "_")] = v.strip()
    except OSError as exc:
        raise _data_error(exc) from None
    return out


def _parse_expr(text: str):
    try:
        return decode(TokenSeq.parse(text, Scheme(STRING)))
    except DecodeError as exc:
        raise _data_error(f"cannot parse expression: {exc}") from None


def _load_model(path):
    try:
        return load_checkpoint(path).build()
    except FileNotFoundError:
        raise _data_error(f"no such checkpoint {path}") from None
    except (ChecksumMismatch, CheckpointFormatError, ShapeMismatch, KeyError, ValueError) as exc:
        raise _data_error(f"{path}: {exc}") from None


def _checkpoints(paths) -> list:
    found = []
    for p in paths:
        if os.path.isdir(p):
            found.extend(sorted(glob.glob(os.path.join(p, "*.ckpt"))))
        elif os.path.exists(p):
            found.append(p)
        else:
            raise _data_error(f"no such file or directory {p}")
    if not found:
        raise _data_error("no checkpoints found")
    return found


def _corpus(data_dir, scheme_name="string-polish"):
    if not os.path.exists(os.path.join(data_dir, MANIFEST)):
        raise _data_error(f"no corpus manifest in {data_dir}")
    try:
        return read_corpus(data_dir, SchemePair.parse(scheme_name))
    except (CorpusIntegrityError, FileNotFoundError, DecodeError, ValueError) as exc:
        raise _data_error(exc) from None


def _split_pairs(pairs, plan, split):
    by_id = {p.id: p for p in pairs}
    if split == "test":
        ids = plan.test_ids
    elif split == "train":
        ids = plan.train_ids
    else:
        ids = plan.train_ids + plan.test_ids
    return [by_id[i] for i in ids]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cfg = GeneratorConfig(max_factors=args.max_factors, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    pairs, plan = generate(cfg, args.out, workers=args.workers)
    manifest = read_manifest(args.out)
    manifest.update(_resolved(args))
    write_manifest(args.out, manifest)
    print(f"pairs = {len(pairs)}")
    if plan is not None:
        print(f"train = {len(plan.train_ids)}")
        print(f"test = {len(plan.test_ids)}")
    return EXIT_OK


def cmd_train(args) -> int:
    sp = SchemePair.parse(args.scheme)
    pairs, plan = _corpus(args.data, sp.name)
    manifest = read_manifest(args.data)
    vocab_line = manifest.get(f"vocab.{sp.format}")
    if not vocab_line:
        raise _data_error(f"corpus manifest has no {sp.format} vocabulary")
    vocab = Vocab(vocab_line.split(" "))
    cfg = model_config(args.model, args.preset, sp.name)
    opt = optimizer_config(args.model, args.preset, sp.name)
    if args.batch_size:
        opt = type(opt)(**{**opt.__dict__, "batch_size": args.batch_size})
    if args.epochs is not None:
        epochs = args.epochs
    elif args.preset == "desk":
        epochs = DESK_EPOCHS
    else:
        epochs = FULL_EPOCHS["lstm" if args.model == "lstm" else f"transformer-{sp.format}"]
    folds = None if args.folds == "all" else [int(f) for f in args.folds.split(",")]
    if folds is not None and any(not 0 <= f < plan.n_folds for f in folds):
        raise CliError(EXIT_USAGE, "usage", f"folds must lie in 0..{plan.n_folds - 1}")
    os.makedirs(args.out, exist_ok=True)
    name = f"{args.model}-{sp.name}"
    log_dir = os.path.join(args.out, f"{name}.logs")
    os.makedirs(log_dir, exist_ok=True)
    spec = ModelSpec(args.model, cfg, sp.name, tuple(vocab.tokens))
    best, reports = cross_validate(spec, pairs, plan, opt, epochs, seed=args.seed, folds=folds,
                                   workers=args.workers, log_dir=log_dir,
                                   manifest_hash=_file_sha(os.path.join(args.data, MANIFEST)),
                                   stop_token_accuracy=args.stop_token_accuracy)
    ckpt_path = os.path.join(args.out, f"{name}.ckpt")
    save_checkpoint(best, ckpt_path)
    with open(os.path.join(args.out, f"{name}.folds.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("fold,validation_pairs,best_epoch,val_rate\n")
        for r in reports:
            fh.write(f"{r.fold},{len(r.val_ids)},{r.best_epoch},{'' if r.val_rate is None else repr(r.val_rate)}\n")
    out_manifest = read_manifest(args.out)
    out_manifest.update({f"{name}.{k}": v for k, v in _resolved(args).items()})
    out_manifest.update({
        f"{name}.checkpoint.sha256": _file_sha(ckpt_path),
        f"{name}.epochs": str(epochs),
        f"{name}.optimizer": " ".join(f"{k}={v!r}" for k, v in opt.__dict__.items()),
        f"{name}.best_fold": str(best.meta.get("fold")),
        f"{name}.best_val_rate": repr(best.val_rate),
        f"{name}.corpus_manifest": best.manifest_hash,
    })
    write_manifest(args.out, out_manifest)
    print(f"checkpoint = {ckpt_path}")
    print(f"best_fold = {best.meta.get('fold')}")
    print(f"best_val_rate = {best.val_rate}")
    return EXIT_OK


def _registry(paths) -> ModelRegistry:
    reg = ModelRegistry()
    for p in _checkpoints(paths):
        try:
            reg.add(_load_model(p))
        except ValueError as exc:
            raise _data_error(exc) from None
    return reg


def cmd_eval(args) -> int:
    reg = _registry(args.models)
    pairs, plan = _corpus(args.data)
    pairs = _split_pairs(pairs, plan, args.split)
    if args.limit:
        pairs = pairs[:args.limit]
    if not pairs:
        raise _data_error("evaluation split is empty")
    outcomes = evaluate(reg, pairs, DEFAULT_POLICY)
    summary = rates(outcomes, reg.names)
    if not args.integrated:
        summary.pop("integrated")
    out = args.out
    os.makedirs(out, exist_ok=True)
    write_outcomes_csv(outcomes, reg.names, os.path.join(out, "outcomes.csv"))
    write_venn_csv(venn_report(outcomes, reg.names), os.path.join(out, "venn.csv"))
    values = {f"rate.{k}": v for k, v in summary.items()}
    values["pairs"] = len(pairs)
    write_summary(values, os.path.join(out, "summary.txt"))
    manifest = _resolved(args)
    manifest["corpus_manifest"] = _file_sha(os.path.join(args.data, MANIFEST))
    write_manifest(out, manifest)
    for k in sorted(values):
        v = values[k]
        print(f"{k} = {v:.4f}" if isinstance(v, float) else f"{k} = {v}")
    return EXIT_OK


def cmd_integrate(args) -> int:
    integrand = _parse_expr(args.expr)
    models = [_load_model(p) for p in args.model]
    if len(models) == 1:
        (res,) = models[0].integrate_batch([integrand], beam_width=args.beam)
        ok = res.expr is not None and verify_pair(integrand, res.expr, DEFAULT_POLICY)
        expr, used, err = res.expr, models[0].name, res.error
    else:
        try:
            registry = ModelRegistry(models)
        except ValueError as exc:
            raise _data_error(exc) from None
        try:
            expr, used = integrated_select(registry, integrand, DEFAULT_POLICY, beam_width=args.beam)
            ok, err = True, None
        except NoCorrectAnswer:
            expr, used, ok, err = None, None, False, "NoCorrectAnswer"
    primitive = " ".join(encode(expr, Scheme(STRING)).tokens) if expr is not None else ""
    print(f"primitive = {primitive}")
    print(f"model = {used or ''}")
    print(f"verified = {'true' if ok else 'false'}")
    if err:
        print(f"decode_error = {err}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        m = _resolved(args)
        m.update({"result.primitive": primitive, "result.verified": str(ok).lower()})
        write_manifest(args.out, m)
    if args.strict and not ok:
        raise CliError(EXIT_NO_ANSWER, "verification", "NoCorrectAnswer")
    return EXIT_OK


def _maps_for(model, expr, target=None):
    """Attention maps for one integrand: LSTM decoder maps or Transformer encoder maps."""
    if target is None:
        (res,) = model.integrate_batch([expr])
        target = res.expr
        if target is None and model.kind == "lstm":
            raise _data_error(f"no decodable output to align decoder attention ({res.error}); pass --target")
    # encoder self-attention does not depend on the decoder input
    batch = model.batch([DatasetPair("analysis", expr, X if target is None else target)])
    if model.kind == "lstm":
        maps = model.attention_maps(batch)
        tokens = list(encode(target, model.scheme_pair.output).tokens)
    else:
        maps = model.attention_maps(batch, kinds=("encoder",))
        tokens = list(encode(expr, model.scheme_pair.input).tokens)
    if model.subtree:
        tokens = [" ".join(tokens[i:i + 3]) for i in range(0, len(tokens), 3)]
    return maps, tokens


def cmd_analyze(args) -> int:
    model = _load_model(args.model)
    expr = _parse_expr(args.expr)
    target = _parse_expr(args.target) if args.target else None
    maps, tokens = _maps_for(model, expr, target)
    out = args.out
    os.makedirs(out, exist_ok=True)
    write_entropy_csv(maps, os.path.join(out, "entropy.csv"))
    layers = layer_mean_entropy(maps)
    with open(os.path.join(out, "layer_entropy.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer,mean_entropy\n")
        for layer, v in layers.items():
            fh.write(f"{'' if layer is None else layer},{v:.10g}\n")
    labels = [f"{m.kind}.l{m.layer}.h{m.head}" if m.head is not None else m.kind for m in maps]
    if len(maps) > 1:
        D = dissimilarity_matrix(maps, args.mode)
        write_matrix_csv(D, labels, os.path.join(out, "head_js.csv"))
        res = mds_embed(D, 2, seed=args.seed)
        write_coords_csv(res, maps, os.path.join(out, "mds.csv"))
        print(f"mds_stress = {res.stress:.6g}")
    if args.pair:
        other_maps, _ = _maps_for(model, _parse_expr(args.pair), target)
        if len(other_maps) != len(maps):
            raise _data_error("expressions yield different numbers of attention maps")
        try:
            for i, (a, b) in enumerate(zip(maps, other_maps)):
                div = map_divergence(a, b, args.mode)
                write_row_divergence_csv(div, tokens, os.path.join(out, f"pair_js.{labels[i]}.csv"))
                print(f"pair_js.{labels[i]} = {div.value:.6g}")
        except ShapeMismatch as exc:
            raise _data_error(f"attention maps are not aligned: {exc}") from None
    for m in maps[:1]:
        _, mean = attention_entropy(m)
        print(f"entropy.first_map = {mean:.6g}")
    manifest = _resolved(args)
    manifest["maps"] = str(len(maps))
    write_manifest(out, manifest)
    return EXIT_OK


def cmd_bench(args) -> int:
    reg = _registry(args.models)
    pairs, plan = _corpus(args.data)
    pairs = _split_pairs(pairs, plan, args.split)
    if args.limit:
        pairs = pairs[:args.limit]
    if not pairs:
        raise _data_error("cannot time zero pairs")
    rows = bench_runtime(reg, pairs, args.repetitions)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_runtime_csv(rows, os.path.join(args.out, "runtime.csv"))
        write_manifest(args.out, _resolved(args))
    print("model,mean_seconds,std_seconds,pairs")
    for r in rows:
        print(f"{r.name},{r.mean:.6g},{r.std:.6g},{r.pairs}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="symint", description="Neural symbolic integration pipeline.")
    p.add_argument("--version", action="version", version=f"symint {__version__}")
    p.add_argument("--config", help="file of key = value flag overrides")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a corpus")
    g.add_argument("--max-factors", type=int, default=5)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="cross-validate one model variant")
    t.add_argument("--model", choices=("lstm", "transformer"), required=True)
    t.add_argument("--scheme", choices=[sp.name for sp in SCHEME_PAIRS], required=True)
    t.add_argument("--preset", choices=("desk", "full"), default="desk")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--folds", default="all", help="'all' or comma-separated fold indices")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--stop-token-accuracy", type=float)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--workers", type=int, default=1)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="correct-answer rates and overlap table")
    e.add_argument("--models", nargs="+", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default="eval_out")
    e.add_argument("--split", choices=("test", "train", "all"), default="test")
    e.add_argument("--limit", type=int)
    e.add_argument("--integrated", action="store_true")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("integrate", help="integrate one expression given in Polish tokens")
    i.add_argument("--model", action="append", required=True, help="checkpoint (repeat for an ensemble)")
    i.add_argument("--expr", required=True)
    i.add_argument("--beam", type=int, default=1)
    i.add_argument("--strict", action="store_true")
    i.add_argument("--out")
    i.set_defaults(func=cmd_integrate)

    a = sub.add_parser("analyze", help="attention entropy, head divergence and MDS")
    a.add_argument("--model", required=True)
    a.add_argument("--expr", required=True)
    a.add_argument("--pair")
    a.add_argument("--target", help="primitive (Polish tokens) to align decoder attention with")
    a.add_argument("--mode", choices=("row-mean", "flatten"), default="row-mean")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default="analysis_out")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bench", help="runtime per integration")
    b.add_argument("--models", nargs="+", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--split", choices=("test", "train", "all"), default="test")
    b.add_argument("--limit", type=int)
    b.add_argument("--repetitions", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def _apply_config(args, argv):
    overrides = _load_config_file(args.config)
    sub_args = vars(args)
    for k, v in overrides.items():
        if k not in sub_args:
            raise CliError(EXIT_USAGE, "usage", f"unknown config key {k!r}")
        if f"--{k.replace('_', '-')}" in argv:
            continue  # explicit flags win over the file
        cur = sub_args[k]
        if isinstance(cur, bool):
            sub_args[k] = v.lower() in ("1", "true", "yes")
        elif isinstance(cur, int):
            sub_args[k] = int(v)
        elif isinstance(cur, float):
            sub_args[k] = float(v)
        elif isinstance(cur, list):
            sub_args[k] = v.split()
        else:
            sub_args[k] = v
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise CliError(EXIT_USAGE, "usage", "a subcommand is required")
        if args.config:
            args = _apply_config(args, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        np.seterr(all="ignore")
        return args.func(args)
    except CliError as exc:
        print(f"symint: error: {exc.category}: {exc}", file=sys.stderr)
        return exc.code
    except (CorpusIntegrityError, ChecksumMismatch, CheckpointFormatError, DecodeError) as exc:
        print(f"symint: error: data: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"symint: error: data: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

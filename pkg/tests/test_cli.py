import os
import subprocess
import sys

import pytest

from symint.datagen import MANIFEST


def run(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "symint", *map(str, args)], capture_output=True, text=True,
                          cwd=cwd, env=dict(os.environ, PYTHONHASHSEED="0"))


def kv(stdout):
    return dict(line.split(" = ", 1) for line in stdout.splitlines() if " = " in line)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    r = run("gen", "--max-factors", 3, "--out", d)
    assert r.returncode == 0, r.stderr
    return d


@pytest.fixture(scope="module")
def models_dir(tmp_path_factory, corpus_dir):
    d = tmp_path_factory.mktemp("models")
    for model in ("lstm", "transformer"):
        r = run("train", "--model", model, "--scheme", "string-polish", "--data", corpus_dir, "--out", d,
                "--epochs", 2, "--folds", 0)
        assert r.returncode == 0, r.stderr
    return d


def test_gen_single_factor(tmp_path):
    r = run("gen", "--max-factors", 1, "--out", tmp_path)
    assert r.returncode == 0, r.stderr
    assert kv(r.stdout)["pairs"] == "8"
    lines = (tmp_path / "string-polish.train.txt").read_text().splitlines()
    lines += (tmp_path / "string-polish.test.txt").read_text().splitlines()
    assert len(lines) == 8


def test_train_outputs(models_dir):
    names = sorted(os.listdir(models_dir))
    assert "lstm-string-polish.ckpt" in names and "transformer-string-polish.ckpt" in names
    assert MANIFEST in names
    log = (models_dir / "lstm-string-polish.logs" / "fold0.csv").read_text().splitlines()
    assert log[0] == "epoch,loss,token_accuracy,val_rate" and len(log) == 3


def test_integrate_untrained_is_deterministic(tmp_path, corpus_dir):
    ck = tmp_path / "untrained"
    r = run("train", "--model", "lstm", "--scheme", "string-polish", "--data", corpus_dir, "--out", ck,
            "--epochs", 0, "--folds", 0)
    assert r.returncode == 0, r.stderr
    outs = [run("integrate", "--model", ck / "lstm-string-polish.ckpt", "--expr", "times x cos x")
            for _ in range(2)]
    assert all(o.returncode == 0 for o in outs), outs[0].stderr
    assert outs[0].stdout == outs[1].stdout
    assert kv(outs[0].stdout)["verified"] == "false"


def test_integrate_strict_exit_code(tmp_path, models_dir):
    r = run("integrate", "--model", models_dir / "lstm-string-polish.ckpt", "--expr", "times x cos x", "--strict")
    assert r.returncode == 4
    assert len(r.stderr.strip().splitlines()) == 1 and r.stderr.startswith("symint: error:")


def test_eval_integrated_summary(tmp_path, corpus_dir, models_dir):
    out = tmp_path / "eval"
    r = run("eval", "--models", models_dir, "--data", corpus_dir, "--integrated", "--split", "train", "--limit", 30,
            "--out", out)
    assert r.returncode == 0, r.stderr
    values = kv(r.stdout)
    per_model = [float(v) for k, v in values.items() if k.startswith("rate.") and k != "rate.integrated"]
    assert len(per_model) == 2
    assert float(values["rate.integrated"]) >= max(per_model)
    assert (out / "venn.csv").exists() and (out / "outcomes.csv").exists()
    assert kv((out / "summary.txt").read_text())["pairs"] == "30"


def test_analyze_smoke(tmp_path, models_dir):
    out = tmp_path / "an"
    r = run("analyze", "--model", models_dir / "transformer-string-polish.ckpt", "--expr", "times x cos x",
            "--pair", "times x sin x", "--out", out)
    assert r.returncode == 0, r.stderr
    for f in ("entropy.csv", "layer_entropy.csv", "head_js.csv", "mds.csv"):
        assert (out / f).exists()
    r = run("analyze", "--model", models_dir / "lstm-string-polish.ckpt", "--expr", "cos x", "--target", "sin x",
            "--pair", "sin x", "--out", tmp_path / "an2")
    assert r.returncode == 0, r.stderr
    assert "pair_js.decoder" in kv(r.stdout)


def test_bench_smoke(tmp_path, corpus_dir, models_dir):
    r = run("bench", "--models", models_dir, "--data", corpus_dir, "--limit", 3, "--out", tmp_path)
    assert r.returncode == 0, r.stderr
    rows = r.stdout.strip().splitlines()
    assert rows[0] == "model,mean_seconds,std_seconds,pairs"
    assert [row.split(",")[0] for row in rows[1:]] == ["lstm-string-polish", "transformer-string-polish",
                                                      "integrated"]


@pytest.mark.parametrize("args", [
    ("gen",),
    ("frobnicate",),
    ("train", "--model", "gru", "--scheme", "string-polish", "--data", ".", "--out", "."),
    (),
])
def test_usage_errors(args):
    r = run(*args)
    assert r.returncode == 2
    lines = r.stderr.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("symint: error: usage:")


def test_data_errors(tmp_path, models_dir):
    cases = [
        ("eval", "--models", tmp_path / "missing", "--data", tmp_path),
        ("integrate", "--model", models_dir / "lstm-string-polish.ckpt", "--expr", "times x"),
        ("integrate", "--model", tmp_path / "nope.ckpt", "--expr", "x"),
        ("train", "--model", "lstm", "--scheme", "string-polish", "--data", tmp_path, "--out", tmp_path / "o"),
    ]
    for args in cases:
        r = run(*args)
        assert r.returncode == 3, (args, r.stderr)
        lines = r.stderr.strip().splitlines()
        assert len(lines) == 1 and lines[0].startswith("symint: error: data:")


def test_corrupted_checkpoint_is_data_error(tmp_path, models_dir):
    src = (models_dir / "lstm-string-polish.ckpt").read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(src[:-8] + bytes(8))
    r = run("integrate", "--model", bad, "--expr", "x")
    assert r.returncode == 3 and "checksum" in r.stderr.lower()


def test_config_file_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# generator\nmax-factors = 1\n")
    r = run("--config", cfg, "gen", "--out", tmp_path / "c")
    assert r.returncode == 0, r.stderr
    assert kv(r.stdout)["pairs"] == "8"
    (tmp_path / "bad.cfg").write_text("colour = blue\n")
    assert run("--config", tmp_path / "bad.cfg", "gen", "--out", tmp_path / "d").returncode == 2
